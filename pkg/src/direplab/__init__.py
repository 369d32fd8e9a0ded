"""Domain adaptation training lab.

Five small networks trained against each other force a representation that
transfers across domains: a generator feeding classifier and discriminator,
plus an encoder/decoder pair whose KL pressure squeezes everything
domain-specific into a near-empty side channel.  The package bundles the
training algorithms, the paired-domain dataset builders that exhibit the
hidden data effect, a seeded experiment harness, and the geometry checks
behind the construction.
"""

from .autodiff import Adam, Tensor, backward
from .datasets import (DomainPair, Split, batcher, build_fashion_pair,
                       cifar_bias_pair, export_pair, load_pair,
                       synthetic_blobs, validate_pair)
from .estimators import DomainAdaptedClassifier
from .geometry import (GeometryError, GeometryInstance, circle_point,
                       ddrep_size, orthogonality_residual, random_instance,
                       vaegan_decompose, verify_claims)
from .harness import (ComparisonReport, RunResult, build_pair, compare,
                      compare_result_dirs, dump_reconstructions,
                      load_metrics_csv, parse_config_file, run_experiment,
                      write_metrics_csv, z_score)
from .losses import LossWeights, lambda_schedule
from .networks import (ModelSet, Network, NetworkArch, VariationalEncoder,
                       blob_arch, build_models, fm_arch, load_checkpoint,
                       save_checkpoint)
from .trainers import (ALGORITHMS, StepReport, TrainConfig, TrainingAbort,
                       ddrep_information_bits, evaluate, flip_bit_reconstruct,
                       reconstruct, train)

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS", "Adam", "ComparisonReport", "DomainAdaptedClassifier",
    "DomainPair", "GeometryError", "GeometryInstance", "LossWeights",
    "ModelSet", "Network", "NetworkArch", "RunResult", "Split", "StepReport",
    "Tensor", "TrainConfig", "TrainingAbort", "VariationalEncoder",
    "backward", "batcher", "blob_arch", "build_fashion_pair", "build_models",
    "build_pair", "cifar_bias_pair", "circle_point", "compare",
    "compare_result_dirs", "ddrep_information_bits", "ddrep_size",
    "dump_reconstructions", "evaluate", "export_pair", "flip_bit_reconstruct",
    "fm_arch", "lambda_schedule", "load_checkpoint", "load_metrics_csv",
    "load_pair", "orthogonality_residual", "parse_config_file",
    "random_instance", "reconstruct", "run_experiment", "save_checkpoint",
    "synthetic_blobs", "train", "vaegan_decompose", "validate_pair",
    "verify_claims", "write_metrics_csv", "z_score",
]
