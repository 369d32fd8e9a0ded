"""Command line front end: run conditions, compare them, dump reconstructions,
and check the geometry claims.

Exit codes: 0 success, 2 configuration or input error, 3 numeric abort or a
failed numeric verification.
"""

import argparse
import os
import sys

import numpy as np

from . import harness
from .geometry import (GeometryError, GeometryInstance, random_instance,
                       verify_claims)
from .networks import blob_arch, build_models, fm_arch, load_checkpoint
from .trainers import TrainingAbort

ALGO_NAMES = {
    "vaegan": "vaegan",
    "explicit": "explicit_ddrep",
    "gan": "gan_based",
    "dann": "dann",
    "dsn": "dsn",
    "source-only": "source_only",
    "target-only": "target_only",
}

# flag destinations -> config-value keys (None flags fall back to these)
_RUN_DEFAULTS = {
    "algorithm": "vaegan", "cheating": "none", "dataset": "fm",
    "bias": 0.9, "revealed_per_class": 0, "ablation": "none",
    "n_seeds": 5, "iterations": 10000, "batch_size": 128,
    "eval_cadence": 100, "seed": 0, "jobs": 1, "n_per_class": 200,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="direplab",
        description="Domain adaptation training lab: paired-domain runs, "
                    "seeded comparisons, reconstruction probes.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one condition over several seeds")
    run.add_argument("--algo", choices=sorted(ALGO_NAMES), default=None,
                     help="training algorithm (default vaegan)")
    run.add_argument("--cheating", choices=("none", "shift", "random"),
                     default=None, help="cheating-bit scenario")
    run.add_argument("--dataset", choices=harness.DATASETS, default=None)
    run.add_argument("--bias", type=float, default=None,
                     help="color bias p for the cifar pair")
    run.add_argument("--semi", type=int, default=None, metavar="PER_CLASS",
                     help="revealed target labels per class")
    run.add_argument("--ablation", default=None,
                     choices=("none", "dsn_reverse_kl", "dsn_star",
                              "vaegan_reverse_difference"))
    run.add_argument("--seeds", type=int, default=None,
                     help="number of seeds (default 5)")
    run.add_argument("--iters", type=int, default=None)
    run.add_argument("--batch", type=int, default=None)
    run.add_argument("--cadence", type=int, default=None,
                     help="iterations between recorded reports")
    run.add_argument("--seed", type=int, default=None, help="first seed")
    run.add_argument("--jobs", type=int, default=None,
                     help="parallel runs (default 1)")
    run.add_argument("--out", default=None, help="results directory")
    run.add_argument("--config", default=None,
                     help="key = value config file; explicit flags override it")
    run.add_argument("--data-dir", default=None,
                     help="dataset root (or set DIREP_DATA_DIR)")
    run.add_argument("--n-per-class", type=int, default=None,
                     help="blob samples per class")
    run.set_defaults(func=cmd_run)

    cmp_p = sub.add_parser("compare",
                           help="z-test two result directories on target accuracy")
    cmp_p.add_argument("--a", required=True, help="first results directory")
    cmp_p.add_argument("--b", required=True, help="second results directory")
    cmp_p.add_argument("--threshold", type=float, default=harness.Z_THRESHOLD)
    cmp_p.set_defaults(func=cmd_compare)

    dump = sub.add_parser("dump-recon",
                          help="write original/reconstruction PGMs, plus the "
                               "bit-flipped probe where the decoder takes one")
    dump.add_argument("--run", required=True,
                      help="results directory holding config.txt and checkpoints")
    dump.add_argument("--out", required=True, help="directory for the PGM files")
    dump.add_argument("--seed", type=int, default=None,
                      help="which seed's checkpoint (default: the first)")
    dump.add_argument("--count", type=int, default=8)
    dump.add_argument("--domain", choices=("source", "target"), default="target")
    dump.add_argument("--side", type=int, default=None,
                      help="image side; required when rows carry extra columns")
    dump.add_argument("--data-dir", default=None)
    dump.set_defaults(func=cmd_dump_recon)

    geo = sub.add_parser("verify-geometry",
                         help="check the circle-solution claims numerically")
    geo.add_argument("--instances", type=int, default=100)
    geo.add_argument("--thetas", type=int, default=1000)
    geo.add_argument("--seed", type=int, default=0)
    geo.add_argument("--out", default=None, help="CSV sweep for the canonical case")
    geo.set_defaults(func=cmd_verify_geometry)

    return parser


def _merged_run_values(args):
    values = harness.parse_config_file(args.config) if args.config else {}
    overrides = {
        "algorithm": ALGO_NAMES[args.algo] if args.algo else None,
        "cheating": args.cheating, "dataset": args.dataset, "bias": args.bias,
        "revealed_per_class": args.semi, "ablation": args.ablation,
        "n_seeds": args.seeds, "iterations": args.iters,
        "batch_size": args.batch, "eval_cadence": args.cadence,
        "seed": args.seed, "jobs": args.jobs, "out": args.out,
        "data_dir": args.data_dir, "n_per_class": args.n_per_class,
    }
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    for key, value in _RUN_DEFAULTS.items():
        values.setdefault(key, value)
    return values


def cmd_run(args):
    values = _merged_run_values(args)
    config, extras = harness.config_from_values(values)
    pair = harness.build_pair(
        extras["dataset"], cheating=extras["cheating"], seed=config.seed,
        bias=extras["bias"], data_dir=extras.get("data_dir"),
        n_per_class=extras["n_per_class"])
    results = harness.run_experiment(config, pair, n_seeds=extras["n_seeds"],
                                     out_dir=extras.get("out"),
                                     jobs=extras["jobs"])
    for r in results:
        wall = "" if r.wall_seconds is None else f"  ({r.wall_seconds:.1f}s)"
        print(f"seed {r.seed}: source {r.source_acc:.4f}  "
              f"target {r.target_acc:.4f}{wall}")
    targets = [r.target_acc for r in results]
    print(f"mean target accuracy over {len(results)} seeds: "
          f"{float(np.mean(targets)):.4f} (sd {float(np.std(targets)):.4f})")
    if extras.get("out"):
        print(f"results in {extras['out']}")
    return 0


def cmd_compare(args):
    report = harness.compare_result_dirs(args.a, args.b,
                                         threshold=args.threshold)
    print(report.summary())
    return 0


def cmd_dump_recon(args):
    cfg_path = os.path.join(args.run, "config.txt")
    with open(cfg_path, encoding="utf-8") as f:
        fp = f.read()

    def get(key):
        return harness.fingerprint_value(fp, key)

    seed = args.seed if args.seed is not None else get("seed0")
    ckpt = os.path.join(args.run, f"seed{seed}.ckpt")
    if not os.path.exists(ckpt):
        raise FileNotFoundError(f"no checkpoint {ckpt}")

    pair = harness.build_pair(
        {"fashion": "fm", "cifar": "cifar", "blobs": "blobs"}[get("dataset")],
        cheating=get("cheating_mode"), seed=get("seed0"),
        bias=get("bias") or 0.9, data_dir=args.data_dir)
    arch = (blob_arch(pair.input_width, get("n_classes"))
            if get("dataset") == "blobs"
            else fm_arch(pair.input_width, get("n_classes")))
    models = build_models(arch, 0, get("algorithm"), get("explicit_variant"))
    load_checkpoint(ckpt, models)

    split = pair.target_test if args.domain == "target" else pair.source_test
    x = split.x[:args.count]
    d = 1.0 if args.domain == "target" else 0.0
    paths = harness.dump_reconstructions(models, x, args.out, d=d,
                                         side=args.side)
    print(f"wrote {len(paths)} PGM files to {args.out}")
    return 0


def cmd_verify_geometry(args):
    canonical = GeometryInstance(S=(1.0, 0.0, 0.0), T=(0.0, 1.0, 0.0))
    report = verify_claims(canonical, n_theta=args.thetas, csv_path=args.out)
    rng = np.random.default_rng(args.seed)
    worst_residual = report.max_residual
    worst_radius = report.max_radius_error
    for _ in range(args.instances):
        r = verify_claims(random_instance(rng), n_theta=args.thetas)
        worst_residual = max(worst_residual, r.max_residual)
        worst_radius = max(worst_radius, r.max_radius_error)
    print(f"verified {args.instances + 1} instances x {args.thetas} angles: "
          f"max orthogonality residual {worst_residual:.3e}, "
          f"max radius error {worst_radius:.3e}, "
          f"size minimized at theta=pi/2")
    if args.out:
        print(f"sweep written to {args.out}")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingAbort as err:
        print(f"aborted: {err}", file=sys.stderr)
        return 3
    except GeometryError as err:
        print(f"geometry check failed: {err}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
