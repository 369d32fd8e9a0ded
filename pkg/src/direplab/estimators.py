"""Scikit-learn adapter: train-on-source, predict-anywhere classification.

Wraps the training loop in the usual fit/predict estimator shape so the
adaptation algorithms drop into sklearn pipelines and model selection.  The
target domain enters as an optional unlabeled array at fit time.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .datasets import DomainPair, Split
from .losses import LossWeights
from .networks import blob_arch
from .trainers import ALGORITHMS, TrainConfig, train


class DomainAdaptedClassifier(BaseEstimator, ClassifierMixin):
    """Classifier trained on labeled source rows plus unlabeled target rows.

    With no target data the adversarial pressure still runs against the
    source itself, which reduces to ordinary supervised training for the
    classification path; pass X_target to actually adapt.
    """

    def __init__(self, algorithm="vaegan", iterations=1000, batch_size=64,
                 seed=0, eval_cadence=100, beta=1.0, gamma=1.0, mu=1.0,
                 tau=1.0, alpha=2e-4, arch=None):
        self.algorithm = algorithm
        self.iterations = iterations
        self.batch_size = batch_size
        self.seed = seed
        self.eval_cadence = eval_cadence
        self.beta = beta
        self.gamma = gamma
        self.mu = mu
        self.tau = tau
        self.alpha = alpha
        self.arch = arch

    def _config(self, n_features, n_classes):
        weights = LossWeights(beta=self.beta, gamma=self.gamma, mu=self.mu,
                              tau=self.tau, alpha_g=self.alpha,
                              alpha_c=self.alpha, alpha_d=self.alpha,
                              alpha_e=self.alpha, alpha_f=self.alpha)
        arch = self.arch if self.arch is not None else blob_arch(n_features,
                                                                 n_classes)
        config = TrainConfig(algorithm=self.algorithm, weights=weights,
                             iterations=self.iterations,
                             batch_size=self.batch_size, seed=self.seed,
                             eval_cadence=self.eval_cadence, arch=arch)
        issues = config.validate()
        if issues:
            raise ValueError("; ".join(issues))
        return config

    def fit(self, X, y, X_target=None):
        X, y = check_X_y(X, y)
        if self.algorithm == "target_only":
            raise ValueError("target_only needs labeled target data, which "
                             "this estimator does not take")
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least 2 classes")
        y_idx = np.searchsorted(self.classes_, y)

        if X_target is None:
            Xt = X
        else:
            Xt = check_array(X_target)
            if Xt.shape[1] != X.shape[1]:
                raise ValueError(
                    f"X_target has {Xt.shape[1]} features, X has {X.shape[1]}")

        pair = DomainPair(
            source_train=Split(X, y_idx, 0),
            source_test=Split(X, y_idx, 0),
            target_train=Split(Xt, None, 1),
            target_test=Split(Xt, None, 1),
            name="estimator", n_classes=len(self.classes_))
        config = self._config(X.shape[1], len(self.classes_))
        self.models_, self.history_ = train(config, pair)
        self.n_features_in_ = X.shape[1]
        return self

    def _forward(self, X):
        check_is_fitted(self, "models_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        g, c = self.models_.G, self.models_.C
        return c.forward_array(g.forward_array(X))

    def predict_proba(self, X):
        return self._forward(X)

    def predict(self, X):
        probs = self._forward(X)
        return self.classes_[np.argmax(probs, axis=1)]

    def transform(self, X):
        """Rows mapped into the domain-independent representation."""
        check_is_fitted(self, "models_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.models_.G.forward_array(X)
