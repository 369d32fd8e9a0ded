"""Per-batch update steps for every algorithm, plus the training loop.

Each step function computes all losses on one source batch and one target
batch, then routes gradients so that every network is updated only by its
own terms:

    G gets lambda*L_g + beta*L_c + gamma*L_r
    C gets L_c,  D gets L_d,  E gets L_kl + mu*L_r,  F gets L_r

All gradients are accumulated before any Adam update is applied, so no
network ever sees another's post-update weights within a step.  Backward
passes are filtered per network, which also keeps L_d out of G and L_g out
of D without any explicit detaching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor, backward
from .datasets import Split, batcher
from .losses import (LossWeights, classification_loss, difference_loss,
                     discriminator_loss, generator_adversarial_loss, kl_loss,
                     kl_per_sample, lambda_schedule, reconstruction_loss,
                     row_normalize)
from .networks import blob_arch, build_models, decoder_forward, fm_arch

ALGORITHMS = ("vaegan", "explicit_ddrep", "gan_based", "dann", "dsn",
              "source_only", "target_only")
ABLATIONS = ("none", "dsn_reverse_kl", "dsn_star", "vaegan_reverse_difference")
_ABLATION_HOST = {"dsn_reverse_kl": "dsn", "dsn_star": "dsn",
                  "vaegan_reverse_difference": "vaegan"}
SEMI_LEVELS = (0, 1, 5, 10, 20, 50, 100)

LN2 = math.log(2.0)


class TrainingAbort(RuntimeError):
    """A loss went non-finite; training stops rather than limping on."""

    def __init__(self, iteration, quantity):
        super().__init__(f"non-finite {quantity} at iteration {iteration}")
        self.iteration = iteration
        self.quantity = quantity


@dataclass
class TrainConfig:
    algorithm: str = "vaegan"
    ablation: str = "none"
    weights: LossWeights = field(default_factory=LossWeights)
    iterations: int = 10000
    batch_size: int = 128  # per domain; a step sees twice this many rows
    seed: int = 0
    revealed_per_class: int = 0
    eval_cadence: int = 100
    explicit_variant: str = "bit"  # bit | append
    dsn_recon_weight: float = 0.15
    dsn_difference_weight: float = 0.05
    reverse_kl_weight: float = 0.01
    reverse_difference_weight: float = 0.05
    arch: object = None  # NetworkArch; None picks one from the pair

    def validate(self):
        """Collect every configuration problem; empty list means valid."""
        issues = []
        if self.algorithm not in ALGORITHMS:
            issues.append(f"unknown algorithm {self.algorithm!r}")
        if self.ablation not in ABLATIONS:
            issues.append(f"unknown ablation {self.ablation!r}")
        elif self.ablation != "none":
            host = _ABLATION_HOST[self.ablation]
            if self.algorithm != host:
                issues.append(f"ablation {self.ablation} requires algorithm {host}")
        if self.iterations <= 0:
            issues.append("iterations must be positive")
        if self.batch_size <= 0:
            issues.append("batch_size must be positive")
        if self.eval_cadence <= 0:
            issues.append("eval_cadence must be positive")
        if self.revealed_per_class not in SEMI_LEVELS:
            issues.append(f"revealed_per_class must be one of {SEMI_LEVELS}")
        if self.explicit_variant not in ("bit", "append"):
            issues.append(f"explicit_variant must be 'bit' or 'append'")
        issues.extend(self.weights.issues())
        for name in ("dsn_recon_weight", "dsn_difference_weight",
                     "reverse_kl_weight", "reverse_difference_weight"):
            if getattr(self, name) < 0:
                issues.append(f"{name} must be non-negative")
        return issues

    def effective_iterations(self):
        # the two-phase ablation resumes for a second stretch of equal length
        if self.ablation == "dsn_star":
            return 2 * self.iterations
        return self.iterations


@dataclass
class StepReport:
    """Loss values of one step; fields not produced by an algorithm stay None."""

    iteration: int
    lam: float
    loss_c: float = None
    loss_d: float = None
    loss_g: float = None
    loss_r: float = None
    loss_kl: float = None
    loss_difference: float = None

    def check_finite(self):
        for name in ("loss_c", "loss_d", "loss_g", "loss_r", "loss_kl",
                     "loss_difference", "lam"):
            v = getattr(self, name)
            if v is not None and not math.isfinite(v):
                raise TrainingAbort(self.iteration, name)


def _onehot(labels, n_classes, dtype):
    labels = np.asarray(labels)
    out = np.zeros((len(labels), n_classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _weighted_sum(terms):
    """Left-fold of weight*tensor, skipping weight-zero terms entirely.

    Skipping (rather than multiplying by 0) keeps the tape identical to the
    variant that never had the term, which the equivalence guarantees rely
    on at the bit level.
    """
    total = None
    for weight, t in terms:
        if t is None or weight == 0.0:
            continue
        part = t if weight == 1.0 else ad.multiply(t, float(weight))
        total = part if total is None else ad.add(total, part)
    return total


def _apply_updates(objectives, models, optimizers, update_order=None):
    """Backward every objective into its own network, then step all Adams."""
    params_of = dict(models.present())
    live = [(name, obj) for name, obj in objectives.items() if obj is not None]
    for name, obj in live:
        backward(obj, params=params_of[name].params(), free=False)
    names = [n for n, _ in live]
    for name in (update_order if update_order is not None else names):
        if name in dict(live):
            optimizers[name].step()


def _item(t):
    return None if t is None else float(t.data)


def _source_class_loss(models, direp_s, labels_s, revealed, dtype):
    n_classes = models.C.out_width
    probs = models.C.forward(direp_s)
    loss = classification_loss(probs, _onehot(labels_s, n_classes, dtype))
    if revealed is not None:
        x_rev, l_rev = revealed
        direp_rev = models.G.forward(Tensor(np.asarray(x_rev, dtype=dtype)))
        probs_rev = models.C.forward(direp_rev)
        loss = ad.add(loss, classification_loss(probs_rev, _onehot(l_rev, n_classes, dtype)))
    return loss


def _domain_bits(n_source, n_target):
    return np.concatenate([np.zeros(n_source), np.ones(n_target)])


def _batches_to_tensors(batch_source, batch_target, dtype):
    xs_np = np.asarray(batch_source[0], dtype=dtype)
    xt_np = np.asarray(batch_target[0], dtype=dtype)
    return xs_np, batch_source[1], xt_np, batch_target[1]


def _tile_columns(t, width):
    """Repeat a (n, m) tensor's columns cyclically out to (n, width)."""
    m = t.data.shape[1]
    pick = np.zeros((m, width), dtype=t.dtype)
    pick[np.arange(width) % m, np.arange(width)] = 1.0
    return ad.matmul(t, Tensor(pick))


def _reverse_difference_term(direp_both, ddrep_both):
    tiled = _tile_columns(ddrep_both, direp_both.data.shape[1])
    return difference_loss(row_normalize(direp_both), row_normalize(tiled))


def _batch_stats_kl(rep):
    """KL-style pull of per-dimension batch statistics toward N(0, 1).

    Differentiable through the statistics themselves; a small epsilon keeps
    the log away from zero-variance columns.
    """
    n = rep.data.shape[0]
    ones = Tensor(np.full((1, n), 1.0 / n, dtype=rep.dtype))
    m = ad.matmul(ones, rep)
    centered = ad.subtract(rep, m)
    v = ad.add(ad.matmul(ones, ad.multiply(centered, centered)),
               Tensor(np.asarray(1e-8, dtype=rep.dtype)))
    term = ad.subtract(ad.subtract(ad.add(ad.log(v), 1.0), v), ad.multiply(m, m))
    return ad.multiply(ad.sum_all(term), -0.5)


def vaegan_step(models, optimizers, batch_source, batch_target, config, t,
                eps_source=None, eps_target=None, revealed=None,
                update_order=None, frozen=()):
    """One simultaneous update of G, E, F, C, D."""
    w = config.weights
    lam = lambda_schedule(t, w.tau)
    dtype = models.G.weights[0].dtype
    xs_np, ls, xt_np, _ = _batches_to_tensors(batch_source, batch_target, dtype)
    xs, xt = Tensor(xs_np), Tensor(xt_np)

    direp_s = models.G.forward(xs)
    direp_t = models.G.forward(xt)
    loss_c = _source_class_loss(models, direp_s, ls, revealed, dtype)

    direp_both = ad.concat_rows(direp_s, direp_t)
    bits = _domain_bits(len(xs_np), len(xt_np))
    d_hat = models.D.forward(direp_both)
    loss_d = discriminator_loss(d_hat, bits)
    loss_g = generator_adversarial_loss(d_hat, bits)

    enc_s = models.E.forward(xs, eps_source)
    enc_t = models.E.forward(xt, eps_target)
    xhat_s = decoder_forward(models.F, direp_s, enc_s.ddrep)
    xhat_t = decoder_forward(models.F, direp_t, enc_t.ddrep)
    loss_r = ad.add(reconstruction_loss(xhat_s, xs_np),
                    reconstruction_loss(xhat_t, xt_np))
    loss_kl = kl_loss(ad.concat_rows(enc_s.z_mean, enc_t.z_mean),
                      ad.concat_rows(enc_s.z_log_var, enc_t.z_log_var))

    rd_terms = []
    loss_difference = None
    if config.ablation == "vaegan_reverse_difference":
        ddrep_both = ad.concat_rows(enc_s.ddrep, enc_t.ddrep)
        loss_difference = _reverse_difference_term(direp_both, ddrep_both)
        rd_terms = [(-config.reverse_difference_weight, loss_difference)]

    objectives = {
        "G": _weighted_sum([(lam, loss_g), (w.beta, loss_c), (w.gamma, loss_r)] + rd_terms),
        "C": loss_c,
        "D": loss_d,
        "E": _weighted_sum([(1.0, loss_kl), (w.mu, loss_r)] + rd_terms),
        "F": loss_r,
    }
    for name in frozen:
        objectives[name] = None

    report = StepReport(iteration=t, lam=lam, loss_c=_item(loss_c),
                        loss_d=_item(loss_d), loss_g=_item(loss_g),
                        loss_r=_item(loss_r), loss_kl=_item(loss_kl),
                        loss_difference=_item(loss_difference))
    report.check_finite()
    _apply_updates(objectives, models, optimizers, update_order)
    return report


def explicit_ddrep_step(models, optimizers, batch_source, batch_target, config, t,
                        eps_source=None, eps_target=None, revealed=None,
                        update_order=None):
    """Like vaegan_step but the DDRep is the domain bit itself.

    In the base variant there is no encoder and no KL term (reported as 0);
    the append variant runs the encoder and concatenates the bit after the
    sampled code, widening F by one input.
    """
    w = config.weights
    lam = lambda_schedule(t, w.tau)
    dtype = models.G.weights[0].dtype
    xs_np, ls, xt_np, _ = _batches_to_tensors(batch_source, batch_target, dtype)
    xs, xt = Tensor(xs_np), Tensor(xt_np)

    direp_s = models.G.forward(xs)
    direp_t = models.G.forward(xt)
    loss_c = _source_class_loss(models, direp_s, ls, revealed, dtype)

    direp_both = ad.concat_rows(direp_s, direp_t)
    bits = _domain_bits(len(xs_np), len(xt_np))
    d_hat = models.D.forward(direp_both)
    loss_d = discriminator_loss(d_hat, bits)
    loss_g = generator_adversarial_loss(d_hat, bits)

    bit_s = Tensor(np.zeros((len(xs_np), 1), dtype=dtype))
    bit_t = Tensor(np.ones((len(xt_np), 1), dtype=dtype))
    if models.E is not None:
        enc_s = models.E.forward(xs, eps_source)
        enc_t = models.E.forward(xt, eps_target)
        dd_s = ad.concat_last(enc_s.ddrep, bit_s)
        dd_t = ad.concat_last(enc_t.ddrep, bit_t)
        loss_kl = kl_loss(ad.concat_rows(enc_s.z_mean, enc_t.z_mean),
                          ad.concat_rows(enc_s.z_log_var, enc_t.z_log_var))
    else:
        dd_s, dd_t = bit_s, bit_t
        loss_kl = None
    xhat_s = decoder_forward(models.F, direp_s, dd_s)
    xhat_t = decoder_forward(models.F, direp_t, dd_t)
    loss_r = ad.add(reconstruction_loss(xhat_s, xs_np),
                    reconstruction_loss(xhat_t, xt_np))

    objectives = {
        "G": _weighted_sum([(lam, loss_g), (w.beta, loss_c), (w.gamma, loss_r)]),
        "C": loss_c,
        "D": loss_d,
        "F": loss_r,
    }
    if models.E is not None:
        objectives["E"] = _weighted_sum([(1.0, loss_kl), (w.mu, loss_r)])

    report = StepReport(iteration=t, lam=lam, loss_c=_item(loss_c),
                        loss_d=_item(loss_d), loss_g=_item(loss_g),
                        loss_r=_item(loss_r),
                        loss_kl=0.0 if loss_kl is None else _item(loss_kl))
    report.check_finite()
    _apply_updates(objectives, models, optimizers, update_order)
    return report


def gan_based_step(models, optimizers, batch_source, batch_target, config, t,
                   revealed=None, update_order=None):
    """Adversarial alignment without any reconstruction path (gamma = 0 case)."""
    w = config.weights
    lam = lambda_schedule(t, w.tau)
    dtype = models.G.weights[0].dtype
    xs_np, ls, xt_np, _ = _batches_to_tensors(batch_source, batch_target, dtype)
    xs, xt = Tensor(xs_np), Tensor(xt_np)

    direp_s = models.G.forward(xs)
    direp_t = models.G.forward(xt)
    loss_c = _source_class_loss(models, direp_s, ls, revealed, dtype)
    direp_both = ad.concat_rows(direp_s, direp_t)
    bits = _domain_bits(len(xs_np), len(xt_np))
    d_hat = models.D.forward(direp_both)
    loss_d = discriminator_loss(d_hat, bits)
    loss_g = generator_adversarial_loss(d_hat, bits)

    objectives = {
        "G": _weighted_sum([(lam, loss_g), (w.beta, loss_c)]),
        "C": loss_c,
        "D": loss_d,
    }
    report = StepReport(iteration=t, lam=lam, loss_c=_item(loss_c),
                        loss_d=_item(loss_d), loss_g=_item(loss_g))
    report.check_finite()
    _apply_updates(objectives, models, optimizers, update_order)
    return report


def dann_step(models, optimizers, batch_source, batch_target, config, t,
              revealed=None, update_order=None):
    """Gradient-reversal training: one objective, negated domain gradient.

    The reversal layer sits between the representation and D, so D trains
    on L_d as usual while G receives -lambda times the same gradient.
    """
    w = config.weights
    lam = lambda_schedule(t, w.tau)
    dtype = models.G.weights[0].dtype
    xs_np, ls, xt_np, _ = _batches_to_tensors(batch_source, batch_target, dtype)
    xs, xt = Tensor(xs_np), Tensor(xt_np)

    direp_s = models.G.forward(xs)
    direp_t = models.G.forward(xt)
    loss_c = _source_class_loss(models, direp_s, ls, revealed, dtype)
    direp_both = ad.concat_rows(direp_s, direp_t)
    bits = _domain_bits(len(xs_np), len(xt_np))
    d_hat = models.D.forward(ad.grad_reverse(direp_both, lam))
    loss_d = discriminator_loss(d_hat, bits)

    objectives = {
        "G": _weighted_sum([(1.0, loss_c), (1.0, loss_d)]),
        "C": loss_c,
        "D": loss_d,
    }
    report = StepReport(iteration=t, lam=lam, loss_c=_item(loss_c),
                        loss_d=_item(loss_d))
    report.check_finite()
    _apply_updates(objectives, models, optimizers, update_order)
    return report


def dsn_step(models, optimizers, batch_source, batch_target, config, t,
             revealed=None, update_order=None, reverse_kl=False):
    """Shared/private separation: reconstruction from both, orthogonality between.

    The shared generator doubles as the adversarial generator; private
    encoders train only on reconstruction and the difference penalty.
    """
    w = config.weights
    lam = lambda_schedule(t, w.tau)
    dtype = models.G.weights[0].dtype
    xs_np, ls, xt_np, _ = _batches_to_tensors(batch_source, batch_target, dtype)
    xs, xt = Tensor(xs_np), Tensor(xt_np)

    shared_s = models.G.forward(xs)
    shared_t = models.G.forward(xt)
    loss_c = _source_class_loss(models, shared_s, ls, revealed, dtype)
    shared_both = ad.concat_rows(shared_s, shared_t)
    bits = _domain_bits(len(xs_np), len(xt_np))
    d_hat = models.D.forward(shared_both)
    loss_d = discriminator_loss(d_hat, bits)
    loss_g = generator_adversarial_loss(d_hat, bits)

    priv_s = models.private_source.forward(xs)
    priv_t = models.private_target.forward(xt)
    xhat_s = decoder_forward(models.F, shared_s, priv_s)
    xhat_t = decoder_forward(models.F, shared_t, priv_t)
    loss_r = ad.add(reconstruction_loss(xhat_s, xs_np),
                    reconstruction_loss(xhat_t, xt_np))
    loss_difference = ad.add(
        difference_loss(row_normalize(shared_s), row_normalize(priv_s)),
        difference_loss(row_normalize(shared_t), row_normalize(priv_t)))

    rkl = _batch_stats_kl(shared_both) if reverse_kl else None
    g_terms = [(lam, loss_g), (w.beta, loss_c), (config.dsn_recon_weight, loss_r)]
    if rkl is not None:
        g_terms.append((config.reverse_kl_weight, rkl))
    private_terms = [(config.dsn_recon_weight, loss_r),
                     (config.dsn_difference_weight, loss_difference)]
    objectives = {
        "G": _weighted_sum(g_terms),
        "C": loss_c,
        "D": loss_d,
        "F": _weighted_sum([(config.dsn_recon_weight, loss_r)]),
        "private_source": _weighted_sum(private_terms),
        "private_target": _weighted_sum(private_terms),
    }
    report = StepReport(iteration=t, lam=lam, loss_c=_item(loss_c),
                        loss_d=_item(loss_d), loss_g=_item(loss_g),
                        loss_r=_item(loss_r), loss_kl=_item(rkl),
                        loss_difference=_item(loss_difference))
    report.check_finite()
    _apply_updates(objectives, models, optimizers, update_order)
    return report


def classifier_only_step(models, optimizers, batch, config, t,
                         revealed=None, update_order=None):
    """Plain supervised training of G and C on one labeled domain."""
    dtype = models.G.weights[0].dtype
    x_np = np.asarray(batch[0], dtype=dtype)
    direp = models.G.forward(Tensor(x_np))
    loss_c = _source_class_loss(models, direp, batch[1], revealed, dtype)
    objectives = {"G": loss_c, "C": loss_c}
    report = StepReport(iteration=t, lam=0.0, loss_c=_item(loss_c))
    report.check_finite()
    _apply_updates(objectives, models, optimizers, update_order)
    return report


def make_optimizers(models, weights):
    """One Adam per present network, using that role's step size."""
    alpha = {"G": weights.alpha_g, "C": weights.alpha_c, "D": weights.alpha_d,
             "E": weights.alpha_e, "F": weights.alpha_f,
             "private_source": weights.alpha_e, "private_target": weights.alpha_e}
    return {name: Adam(net.params(), alpha[name]) for name, net in models.present()}


def _pick_revealed(split, per_class, rng):
    """Choose the revealed target samples once per run, per_class from each class."""
    labels = split.labels
    chosen = []
    for c in np.unique(labels):
        idx = np.where(labels == c)[0]
        if len(idx) < per_class:
            raise ValueError(f"class {c} has only {len(idx)} samples, need {per_class}")
        chosen.append(rng.choice(idx, size=per_class, replace=False))
    sel = np.concatenate(chosen)
    return split.x[sel], labels[sel]


def train(config, pair, models=None):
    """Run the configured algorithm; returns (models, reports).

    Deterministic given config.seed: initialization, batch order, sampling
    noise, and revealed-label choice each draw from their own child stream
    of the seed, so algorithms that skip a stream still agree on the rest.
    """
    w = config.weights
    seq = np.random.SeedSequence(config.seed)
    init_seed, src_seed, tgt_seed, eps_seed, pick_seed, rev_seed = seq.spawn(6)

    arch = config.arch
    if arch is None:
        arch = (blob_arch(pair.input_width, pair.n_classes) if pair.name == "blobs"
                else fm_arch(pair.input_width, pair.n_classes))
    if models is None:
        models = build_models(arch, init_seed, config.algorithm, config.explicit_variant)
    optimizers = make_optimizers(models, w)
    dtype = models.G.weights[0].dtype

    train_target = config.algorithm == "target_only"
    src_stream = batcher(pair.target_train if train_target else pair.source_train,
                         config.batch_size, src_seed)
    tgt_stream = batcher(pair.target_train, config.batch_size, tgt_seed)
    eps_rng = np.random.default_rng(eps_seed)

    revealed_stream = None
    if config.revealed_per_class > 0 and config.algorithm != "target_only":
        rx, rl = _pick_revealed(pair.target_train, config.revealed_per_class,
                                np.random.default_rng(pick_seed))
        revealed_split = Split(rx, rl, 1)
        revealed_stream = batcher(revealed_split, min(config.batch_size, len(rl)), rev_seed)

    has_encoder = models.E is not None
    latent = models.E.latent_dim if has_encoder else 0

    reports = []
    for t in range(config.effective_iterations()):
        batch_s = next(src_stream)
        batch_t = next(tgt_stream)
        revealed = next(revealed_stream) if revealed_stream is not None else None
        eps_s = eps_t = None
        if has_encoder:
            eps_s = eps_rng.standard_normal((len(batch_s[0]), latent)).astype(dtype)
            eps_t = eps_rng.standard_normal((len(batch_t[0]), latent)).astype(dtype)

        if config.algorithm == "vaegan":
            report = vaegan_step(models, optimizers, batch_s, batch_t, config, t,
                                 eps_source=eps_s, eps_target=eps_t, revealed=revealed)
        elif config.algorithm == "explicit_ddrep":
            kw = {"eps_source": eps_s, "eps_target": eps_t} if has_encoder else {}
            report = explicit_ddrep_step(models, optimizers, batch_s, batch_t,
                                         config, t, revealed=revealed, **kw)
        elif config.algorithm == "gan_based":
            report = gan_based_step(models, optimizers, batch_s, batch_t, config, t,
                                    revealed=revealed)
        elif config.algorithm == "dann":
            report = dann_step(models, optimizers, batch_s, batch_t, config, t,
                               revealed=revealed)
        elif config.algorithm == "dsn":
            on = (config.ablation == "dsn_reverse_kl"
                  or (config.ablation == "dsn_star" and t < config.iterations))
            report = dsn_step(models, optimizers, batch_s, batch_t, config, t,
                              revealed=revealed, reverse_kl=on)
        elif config.algorithm in ("source_only", "target_only"):
            report = classifier_only_step(models, optimizers, batch_s, config, t,
                                          revealed=revealed)
        else:
            raise ValueError(f"unknown algorithm {config.algorithm!r}")

        if (t + 1) % config.eval_cadence == 0:
            reports.append(report)
    return models, reports


def evaluate(g, c, split, batch_size=2048):
    """Fraction of argmax-correct predictions; argmax ties pick the lowest index."""
    if len(split) == 0:
        raise ValueError("cannot evaluate on an empty split")
    if split.labels is None:
        raise ValueError("evaluation needs labels")
    correct = 0
    for start in range(0, len(split), batch_size):
        x = split.x[start:start + batch_size]
        probs = c.forward_array(g.forward_array(x))
        pred = np.argmax(probs, axis=1)
        correct += int(np.sum(pred == split.labels[start:start + batch_size]))
    return correct / len(split)


def reconstruct(models, x, d, flip=False):
    """Decode x back through the model's decoder.

    The DDRep fed to the decoder follows the trained layout: the encoder
    code, the domain bit, or both.  With flip=True the bit is inverted
    first, x_tilde = F(G(x), 1 - d), which probes what the DDRep filters;
    models whose decoder takes no bit reject flip.
    """
    if models.F is None:
        raise ValueError("model has no decoder")
    if models.private_source is not None:
        raise ValueError("the separation baseline decodes from its private "
                         "encoders, not from a DDRep; probe not supported")
    x = np.atleast_2d(np.asarray(x, dtype=models.G.weights[0].dtype))
    d = np.broadcast_to(np.asarray(d, dtype=x.dtype).reshape(-1, 1), (len(x), 1))
    parts = [models.G.forward_array(x)]
    if models.E is not None:
        code, _ = models.E.stats_array(x)
        parts.append(code)
    missing = models.F.in_width - sum(p.shape[1] for p in parts)
    if missing == 1:
        parts.append((1.0 - d) if flip else d)
    elif missing == 0:
        if flip:
            raise ValueError("decoder takes no domain bit; nothing to flip")
    else:
        raise ValueError("decoder width does not match the model's "
                         "representations")
    return models.F.forward_array(np.hstack(parts))


def flip_bit_reconstruct(models, x, d):
    """Reconstruction with the domain bit flipped; see `reconstruct`."""
    return reconstruct(models, x, d, flip=True)


def ddrep_information_bits(encoder, split, batch_size=4096):
    """Mean KL of the encoder's output distribution, in bits."""
    total = 0.0
    for start in range(0, len(split), batch_size):
        mean, log_var = encoder.stats_array(split.x[start:start + batch_size])
        total += float(np.sum(kl_per_sample(mean, log_var)))
    return total / len(split) / LN2
