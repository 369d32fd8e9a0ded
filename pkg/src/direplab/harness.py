"""Seeded experiment orchestration: multi-run execution, metrics persistence,
and statistical comparison of conditions.

A batch of runs writes into one directory: config.txt records the exact
configuration, results.csv grows one record at a time, and per-seed
checkpoints land next to them.  Re-invoking on the same directory resumes,
skipping seeds whose summary row is already present.
"""

import ast
import csv
import dataclasses
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass

import numpy as np

try:
    import fcntl
except ImportError:  # non-POSIX; appends are then unguarded
    fcntl = None

from .datasets import build_fashion_pair, cifar_bias_pair, synthetic_blobs
from .networks import save_checkpoint
from .trainers import StepReport, evaluate, reconstruct, train

Z_THRESHOLD = 2.33
DATASETS = ("fm", "cifar", "blobs")

CSV_HEADER = ["algo", "cheating_mode", "bias", "seed", "iteration",
              "loss_c", "loss_d", "loss_g", "loss_r", "loss_kl", "lambda",
              "source_acc", "target_acc"]


@dataclass
class RunResult:
    """One seed's outcome: final accuracies plus the full report history."""

    fingerprint: str
    seed: int
    source_acc: float
    target_acc: float
    history: list
    wall_seconds: float = None

    def __post_init__(self):
        for name in ("source_acc", "target_acc"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {v}")


@dataclass
class ComparisonReport:
    label_a: str
    label_b: str
    accs_a: list
    accs_b: list
    mean_a: float
    mean_b: float
    z: float
    threshold: float = Z_THRESHOLD

    @property
    def exact(self):
        """Zero variance on both sides with different means: separation is exact."""
        return math.isinf(self.z)

    @property
    def significant(self):
        return self.z >= self.threshold

    def summary(self):
        z_text = "exact" if self.exact else f"z={self.z:.2f}"
        verdict = ("significant" if self.significant
                   else "not significant") + f" at {self.threshold}"
        return (f"{self.label_a} mean={self.mean_a:.4f} vs "
                f"{self.label_b} mean={self.mean_b:.4f}: {z_text} ({verdict})")


def z_score(accs_a, accs_b):
    """Two-sample z on per-seed accuracies, sample (n-1) variances.

    Both lists degenerate (zero variance): equal means give 0, unequal
    means give a signed infinity, reported upstream as exact separation.
    """
    a = np.asarray(accs_a, dtype=np.float64)
    b = np.asarray(accs_b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("z_score needs at least 2 values per side")
    ma, mb = float(a.mean()), float(b.mean())
    va, vb = float(a.var(ddof=1)), float(b.var(ddof=1))
    if va == 0.0 and vb == 0.0:
        if ma == mb:
            return 0.0
        return math.copysign(math.inf, ma - mb)
    return (ma - mb) / math.sqrt(va / len(a) + vb / len(b))


def compare(label_a, accs_a, label_b, accs_b, threshold=Z_THRESHOLD):
    return ComparisonReport(
        label_a=label_a, label_b=label_b,
        accs_a=list(accs_a), accs_b=list(accs_b),
        mean_a=float(np.mean(accs_a)), mean_b=float(np.mean(accs_b)),
        z=z_score(accs_a, accs_b), threshold=threshold)


# ---------------------------------------------------------------------------
# run identity

_FINGERPRINT_KEYS = (
    "algorithm", "ablation", "explicit_variant", "iterations",
    "effective_iterations", "batch_size", "eval_cadence", "revealed_per_class",
    "seed0", "beta", "gamma", "mu", "tau", "alpha_g", "alpha_c", "alpha_d",
    "alpha_e", "alpha_f", "dsn_recon_weight", "dsn_difference_weight",
    "reverse_kl_weight", "reverse_difference_weight",
    "dataset", "cheating_mode", "bias", "n_classes",
)


def run_fingerprint(config, pair):
    """Canonical text identity of (config, pair); stored as config.txt."""
    w = config.weights
    values = {
        "algorithm": config.algorithm, "ablation": config.ablation,
        "explicit_variant": config.explicit_variant,
        "iterations": config.iterations,
        "effective_iterations": config.effective_iterations(),
        "batch_size": config.batch_size, "eval_cadence": config.eval_cadence,
        "revealed_per_class": config.revealed_per_class, "seed0": config.seed,
        "beta": w.beta, "gamma": w.gamma, "mu": w.mu, "tau": w.tau,
        "alpha_g": w.alpha_g, "alpha_c": w.alpha_c, "alpha_d": w.alpha_d,
        "alpha_e": w.alpha_e, "alpha_f": w.alpha_f,
        "dsn_recon_weight": config.dsn_recon_weight,
        "dsn_difference_weight": config.dsn_difference_weight,
        "reverse_kl_weight": config.reverse_kl_weight,
        "reverse_difference_weight": config.reverse_difference_weight,
        "dataset": pair.name, "cheating_mode": pair.cheating_mode,
        "bias": pair.bias, "n_classes": pair.n_classes,
    }
    return "\n".join(f"{k} = {values[k]!r}" for k in _FINGERPRINT_KEYS)


def fingerprint_value(fingerprint, key):
    for line in fingerprint.splitlines():
        k, _, v = line.partition(" = ")
        if k == key:
            return ast.literal_eval(v)
    raise KeyError(key)


# ---------------------------------------------------------------------------
# metrics persistence

def _fmt(v):
    return "" if v is None else format(float(v), ".6g")


def _result_rows(result):
    fp = result.fingerprint
    algo = fingerprint_value(fp, "algorithm")
    mode = fingerprint_value(fp, "cheating_mode")
    bias = fingerprint_value(fp, "bias")
    total = fingerprint_value(fp, "effective_iterations")
    rows = []
    for r in result.history:
        rows.append([algo, mode, _fmt(bias), str(result.seed), str(r.iteration),
                     _fmt(r.loss_c), _fmt(r.loss_d), _fmt(r.loss_g),
                     _fmt(r.loss_r), _fmt(r.loss_kl), _fmt(r.lam), "", ""])
    rows.append([algo, mode, _fmt(bias), str(result.seed), str(total),
                 "", "", "", "", "", "",
                 _fmt(result.source_acc), _fmt(result.target_acc)])
    return rows


def _locked_append(path, rows):
    """Append rows under an exclusive whole-file lock; header on first write."""
    with open(path, "a", newline="", encoding="utf-8") as f:
        if fcntl is not None:
            fcntl.flock(f.fileno(), fcntl.LOCK_EX)
        try:
            writer = csv.writer(f, lineterminator="\n")
            if f.tell() == 0:
                writer.writerow(CSV_HEADER)
            writer.writerows(rows)
            f.flush()
        finally:
            if fcntl is not None:
                fcntl.flock(f.fileno(), fcntl.LOCK_UN)


def write_metrics_csv(results, path):
    """Write a fresh CSV: one row per StepReport plus a summary row per run."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for result in results:
                writer.writerows(_result_rows(result))
    except OSError as err:
        raise OSError(f"cannot write metrics to {path}: {err}") from err


def append_result(path, result):
    _locked_append(path, _result_rows(result))


def load_metrics_csv(path):
    """Typed rows back from disk; empty cells become None."""
    def num(cell):
        return None if cell == "" else float(cell)

    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for rec in reader:
            rows.append({
                "algo": rec["algo"], "cheating_mode": rec["cheating_mode"],
                "bias": num(rec["bias"]), "seed": int(rec["seed"]),
                "iteration": int(rec["iteration"]),
                "loss_c": num(rec["loss_c"]), "loss_d": num(rec["loss_d"]),
                "loss_g": num(rec["loss_g"]), "loss_r": num(rec["loss_r"]),
                "loss_kl": num(rec["loss_kl"]), "lambda": num(rec["lambda"]),
                "source_acc": num(rec["source_acc"]),
                "target_acc": num(rec["target_acc"]),
            })
    return rows


def summary_accuracies(rows):
    """{seed: (source_acc, target_acc)} from the summary rows of a metrics file."""
    out = {}
    for row in rows:
        if row["source_acc"] is not None:
            out[row["seed"]] = (row["source_acc"], row["target_acc"])
    return out


def _results_from_rows(rows, fingerprint):
    """Rebuild RunResults for seeds whose summary row is present."""
    by_seed = {}
    for row in rows:
        by_seed.setdefault(row["seed"], []).append(row)
    out = {}
    for seed, recs in by_seed.items():
        summary = [r for r in recs if r["source_acc"] is not None]
        if not summary:
            continue  # interrupted mid-run; will be re-run
        history = [StepReport(iteration=r["iteration"], lam=r["lambda"],
                              loss_c=r["loss_c"], loss_d=r["loss_d"],
                              loss_g=r["loss_g"], loss_r=r["loss_r"],
                              loss_kl=r["loss_kl"])
                   for r in recs if r["source_acc"] is None]
        out[seed] = RunResult(fingerprint=fingerprint, seed=seed,
                              source_acc=summary[-1]["source_acc"],
                              target_acc=summary[-1]["target_acc"],
                              history=history, wall_seconds=None)
    return out


# ---------------------------------------------------------------------------
# experiment driver

def _run_single(config, pair, seed, fingerprint):
    cfg = dataclasses.replace(config, seed=seed)
    start = time.perf_counter()
    models, history = train(cfg, pair)
    result = RunResult(
        fingerprint=fingerprint, seed=seed,
        source_acc=evaluate(models.G, models.C, pair.source_test),
        target_acc=evaluate(models.G, models.C, pair.target_test),
        history=history, wall_seconds=time.perf_counter() - start)
    return result, models


def run_experiment(config, pair, n_seeds=5, out_dir=None, jobs=1):
    """n_seeds independent runs with seeds seed..seed+n-1; returns RunResults.

    All validation problems are reported before any run starts.  With an
    out_dir, results append to results.csv as each seed finishes and seeds
    already summarized there are not re-run.
    """
    issues = config.validate()
    if issues:
        raise ValueError("invalid config: " + "; ".join(issues))
    if n_seeds < 1:
        raise ValueError("n_seeds must be at least 1")

    fingerprint = run_fingerprint(config, pair)
    seeds = list(range(config.seed, config.seed + n_seeds))
    results = {}
    csv_path = None

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        cfg_path = os.path.join(out_dir, "config.txt")
        if os.path.exists(cfg_path):
            with open(cfg_path, encoding="utf-8") as f:
                recorded = f.read().strip()
            if recorded != fingerprint:
                raise ValueError(
                    f"{out_dir} already holds a different configuration; "
                    "use a fresh directory")
        else:
            with open(cfg_path, "w", encoding="utf-8") as f:
                f.write(fingerprint + "\n")
        csv_path = os.path.join(out_dir, "results.csv")
        if os.path.exists(csv_path):
            results = _results_from_rows(load_metrics_csv(csv_path), fingerprint)

    def persist(result, models):
        if csv_path:
            append_result(csv_path, result)
        if out_dir:
            save_checkpoint(os.path.join(out_dir, f"seed{result.seed}.ckpt"),
                            models, seed=result.seed)

    pending = [s for s in seeds if s not in results]
    if jobs > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_run_single, config, pair, s, fingerprint): s
                       for s in pending}
            for fut in as_completed(futures):
                result, models = fut.result()
                persist(result, models)
                results[result.seed] = result
    else:
        for s in pending:
            result, models = _run_single(config, pair, s, fingerprint)
            persist(result, models)
            results[s] = result
    return [results[s] for s in seeds]


def compare_result_dirs(dir_a, dir_b, threshold=Z_THRESHOLD):
    """ComparisonReport of two result directories, on final target accuracy."""
    sides = []
    for d in (dir_a, dir_b):
        rows = load_metrics_csv(os.path.join(d, "results.csv"))
        accs = [acc for _, (_, acc) in sorted(summary_accuracies(rows).items())]
        if len(accs) < 2:
            raise ValueError(f"{d}: need at least 2 completed seeds, have {len(accs)}")
        with open(os.path.join(d, "config.txt"), encoding="utf-8") as f:
            fp = f.read()
        label = (f"{fingerprint_value(fp, 'algorithm')}"
                 f"/{fingerprint_value(fp, 'cheating_mode')}")
        sides.append((label, accs))
    (label_a, accs_a), (label_b, accs_b) = sides
    return compare(label_a, accs_a, label_b, accs_b, threshold=threshold)


# ---------------------------------------------------------------------------
# reconstruction dumps

def write_pgm(path, image_rows, side):
    """8-bit binary PGM; values clamped to [0,1] then scaled to 0..255."""
    img = np.asarray(image_rows, dtype=np.float64).reshape(side, side)
    payload = np.rint(255.0 * np.clip(img, 0.0, 1.0)).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{side} {side}\n255\n".encode("ascii"))
        f.write(payload.tobytes())


def load_pgm(path):
    with open(path, "rb") as f:
        magic = f.readline().split()
        dims = f.readline().split()
        maxval = f.readline().split()
        if magic != [b"P5"] or maxval != [b"255"]:
            raise ValueError(f"{path}: not an 8-bit binary PGM")
        w, h = int(dims[0]), int(dims[1])
        data = np.frombuffer(f.read(w * h), dtype=np.uint8)
    return data.reshape(h, w)


def dump_reconstructions(models, x, out_dir, d=0.0, side=None, prefix="sample"):
    """Per sample: original, reconstruction, and bit-flipped reconstruction.

    The flipped image only exists for decoders that take the domain bit;
    for the others each sample gets two files instead of three.  The model
    still sees full rows; only the leading side*side columns are written,
    which is what trims cheating bits off image rows.  With no side given
    the row width must itself be a square number.
    """
    x = np.atleast_2d(np.asarray(x))
    if side is None:
        side = math.isqrt(x.shape[1])
        if side * side != x.shape[1]:
            raise ValueError(
                f"row width {x.shape[1]} is not square; pass side= explicitly")
    if side * side > x.shape[1]:
        raise ValueError(f"rows are narrower than {side}x{side}")
    plain = reconstruct(models, x, d)
    variants = [("original", x), ("recon", plain)]
    try:
        variants.append(("flipped", reconstruct(models, x, d, flip=True)))
    except ValueError:
        pass  # widths already validated above; only the bit can be missing
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    pixels = side * side
    for i in range(len(x)):
        for tag, rows in variants:
            path = os.path.join(out_dir, f"{prefix}{i:03d}_{tag}.pgm")
            write_pgm(path, rows[i, :pixels], side)
            paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# config files

_CONFIG_KEYS = {
    "algorithm": str, "ablation": str, "explicit_variant": str,
    "iterations": int, "batch_size": int, "seed": int,
    "revealed_per_class": int, "eval_cadence": int,
    "beta": float, "gamma": float, "mu": float, "tau": float,
    "alpha_g": float, "alpha_c": float, "alpha_d": float,
    "alpha_e": float, "alpha_f": float,
    "dsn_recon_weight": float, "dsn_difference_weight": float,
    "reverse_kl_weight": float, "reverse_difference_weight": float,
    "n_seeds": int, "jobs": int, "dataset": str, "cheating": str,
    "bias": float, "data_dir": str, "out": str, "n_per_class": int,
}
_WEIGHT_KEYS = ("beta", "gamma", "mu", "tau",
                "alpha_g", "alpha_c", "alpha_d", "alpha_e", "alpha_f")
_EXTRA_KEYS = ("n_seeds", "jobs", "dataset", "cheating", "bias", "data_dir",
               "out", "n_per_class")


def parse_config_file(path):
    """key = value lines, # comments; unknown keys are hard errors."""
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = key.strip(), value.strip()
            if key not in _CONFIG_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _CONFIG_KEYS[key](value)
            except ValueError:
                raise ValueError(
                    f"{path}:{lineno}: bad {key} value {value!r}") from None
    return values


def config_from_values(values):
    """Split parsed values into (TrainConfig, harness extras)."""
    from .losses import LossWeights
    from .trainers import TrainConfig
    weight_kwargs = {k: values[k] for k in _WEIGHT_KEYS if k in values}
    config_kwargs = {k: v for k, v in values.items()
                     if k not in _WEIGHT_KEYS and k not in _EXTRA_KEYS}
    config = TrainConfig(weights=LossWeights(**weight_kwargs), **config_kwargs)
    extras = {k: values[k] for k in _EXTRA_KEYS if k in values}
    return config, extras


def build_pair(dataset, cheating="none", seed=0, bias=0.9, data_dir=None,
               n_per_class=200):
    """Dataset dispatch shared by the CLI and the acceptance harness."""
    if dataset == "fm":
        return build_fashion_pair(cheating, seed, data_dir)
    if dataset == "cifar":
        return cifar_bias_pair(bias, seed, data_dir)
    if dataset == "blobs":
        return synthetic_blobs(n_per_class=n_per_class, cheat_scenario=cheating,
                               seed=seed)
    raise ValueError(f"dataset must be one of {DATASETS}, got {dataset!r}")
