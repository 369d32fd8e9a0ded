"""Loss terms shared by the training algorithms.

All losses are means over the batch axis rather than raw sums, so the
weighting coefficients keep their meaning when the batch size changes.
Targets (labels, domain bits, reconstruction inputs) are plain numpy
arrays; predictions are graph tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DomainError, ShapeError, Tensor


@dataclass
class LossWeights:
    """Coefficients of the update equations plus the per-network step sizes."""

    beta: float = 1.0   # classification term in the G update
    gamma: float = 1.0  # reconstruction term in the G update; 0 disables F/E feedback
    mu: float = 1.0     # reconstruction term in the E update
    tau: float = 1.0    # time constant of the adversarial ramp
    alpha_g: float = 2e-4
    alpha_c: float = 2e-4
    alpha_d: float = 2e-4
    alpha_e: float = 2e-4
    alpha_f: float = 2e-4

    def issues(self):
        bad = [name for name, v in vars(self).items() if v < 0]
        return [f"loss weight {name} must be non-negative" for name in bad]


def lambda_schedule(t, tau=1.0):
    """Adversarial weight ramp: 0 at t=0, saturating at 1.

    lambda(t) = 2 / (1 + exp(-t / tau)) - 1
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    return 2.0 / (1.0 + math.exp(-float(t) / tau)) - 1.0


def _as_constant(values, like):
    if isinstance(values, Tensor):
        return Tensor(values.data.astype(like.dtype, copy=False))
    return Tensor(np.asarray(values, dtype=like.dtype))


def _batch_size(t):
    if t.data.ndim < 1 or t.data.shape[0] == 0:
        raise ShapeError(f"expected a non-empty batch, got shape {t.data.shape}")
    return t.data.shape[0]


def classification_loss(predictions, labels_onehot):
    """Mean cross-entropy against one-hot labels.

    `predictions` are class probabilities, (n, k).  When they come from a
    softmax recorded on the tape, the loss differentiates through the
    logits (log-sum-exp form); otherwise it takes log of the picked
    probability, which raises DomainError if that probability is 0.
    """
    y = _as_constant(labels_onehot, predictions)
    if y.data.shape != predictions.data.shape:
        raise ShapeError(f"labels shape {y.data.shape} != predictions shape {predictions.data.shape}")
    n = _batch_size(predictions)
    if predictions._logits is not None:
        picked = ad.multiply(ad.log_softmax(predictions._logits), y)
        return ad.multiply(ad.sum_all(picked), -1.0 / n)
    ones = Tensor(np.ones((y.data.shape[-1], 1), dtype=predictions.dtype))
    p_true = ad.matmul(ad.multiply(predictions, y), ones)
    return ad.multiply(ad.sum_all(ad.log(p_true)), -1.0 / n)


def _bits_array(domain_bits, n, dtype):
    d = np.asarray(domain_bits, dtype=dtype).reshape(-1)
    if d.shape[0] != n:
        raise ShapeError(f"expected {n} domain bits, got {d.shape[0]}")
    if not np.all((d == 0) | (d == 1)):
        raise ValueError("domain bits must be 0 or 1")
    return d


def discriminator_loss(domain_probs, domain_bits):
    """Mean binary cross-entropy of the discriminator output.

    Accepts either two-column softmax output (columns: P(source), P(target))
    or a single column/vector giving P(target).  `domain_bits` holds 0 for
    source rows and 1 for target rows.
    """
    n = _batch_size(domain_probs)
    d = _bits_array(domain_bits, n, domain_probs.dtype)
    if domain_probs.data.ndim == 2 and domain_probs.data.shape[1] == 2:
        onehot = np.stack([1.0 - d, d], axis=1).astype(domain_probs.dtype)
        return classification_loss(domain_probs, onehot)
    if domain_probs.data.ndim in (1, 2) and (domain_probs.data.ndim == 1 or domain_probs.data.shape[1] == 1):
        d = d.reshape(domain_probs.data.shape)
        dc = Tensor(d)
        flip = Tensor((1.0 - d).astype(domain_probs.dtype))
        p_correct = ad.add(ad.multiply(dc, domain_probs),
                           ad.multiply(flip, ad.subtract(1.0, domain_probs)))
        return ad.multiply(ad.sum_all(ad.log(p_correct)), -1.0 / n)
    raise ShapeError(f"domain_probs must be (n, 2), (n, 1) or (n,), got {domain_probs.data.shape}")


def generator_adversarial_loss(domain_probs, domain_bits):
    """The fooling objective: the discriminator loss with labels inverted.

    Identical in value and gradient to discriminator_loss(probs, 1 - bits);
    minimizing it pushes the generator toward representations the
    discriminator assigns to the wrong domain.
    """
    n = _batch_size(domain_probs)
    d = _bits_array(domain_bits, n, domain_probs.dtype)
    return discriminator_loss(domain_probs, 1.0 - d)


def reconstruction_loss(reconstruction, original):
    """Mean over the batch of the squared L2 distance per row."""
    x = _as_constant(original, reconstruction)
    if x.data.shape != reconstruction.data.shape:
        raise ShapeError(f"original shape {x.data.shape} != reconstruction shape {reconstruction.data.shape}")
    n = _batch_size(reconstruction)
    diff = ad.subtract(reconstruction, x)
    return ad.multiply(ad.sum_of_squares(diff), 1.0 / n)


def kl_loss(z_mean, z_log_var):
    """Mean KL divergence of N(mean, var) from the standard normal.

    Per sample: -0.5 * sum_latent(1 + log_var - exp(log_var) - mean^2),
    which is 0 exactly at mean 0, var 1 and positive everywhere else.
    """
    if z_mean.data.shape != z_log_var.data.shape:
        raise ShapeError(f"mean shape {z_mean.data.shape} != log_var shape {z_log_var.data.shape}")
    n = _batch_size(z_mean)
    term = ad.subtract(ad.subtract(ad.add(z_log_var, 1.0), ad.exp(z_log_var)),
                       ad.multiply(z_mean, z_mean))
    return ad.multiply(ad.sum_all(term), -0.5 / n)


def kl_per_sample(z_mean, z_log_var):
    """Numpy KL divergence per row, in nats; rows sum over latent dims."""
    m = np.asarray(z_mean, dtype=np.float64)
    lv = np.asarray(z_log_var, dtype=np.float64)
    return -0.5 * np.sum(1.0 + lv - np.exp(lv) - m * m, axis=-1)


def difference_loss(shared, private):
    """Sum of squared entries of shared^T @ private.

    Zero exactly when every shared column is orthogonal to every private
    column over the batch.  Inputs are expected to be normalized already
    (see `row_normalize`).
    """
    if shared.data.shape != private.data.shape:
        raise ShapeError(f"shared shape {shared.data.shape} != private shape {private.data.shape}")
    return ad.sum_of_squares(ad.matmul(ad.transpose(shared), private))


def row_normalize(t):
    """Center each column over the batch, then scale each row to unit norm.

    The centering means and row norms are treated as constants, so
    gradients only flow through the representation values themselves.
    """
    col_mean = Tensor(np.mean(t.data, axis=0, keepdims=True))
    centered = ad.subtract(t, col_mean)
    norms = np.sqrt(np.sum(centered.data * centered.data, axis=1, keepdims=True)) + 1e-6
    inv = Tensor(np.broadcast_to(1.0 / norms, t.data.shape).astype(t.dtype).copy())
    return ad.multiply(centered, inv)
