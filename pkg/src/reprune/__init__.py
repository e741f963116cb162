"""Cyclic filter drop-and-reinit training for small convolutional nets.

Train a net, periodically rank its filters, drop the weakest slice,
train the remainder, then bring the dropped filters back orthogonal to
what survived. The package also carries the measurement side: nine
filter-saliency metrics, activation-correlation maps, and rank-agreement
tooling for comparing any metric against ablation ground truth.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, parse_config, validate_config
from .data import Dataset, assemble, load_cifar10_binary, load_idx
from .errors import ConfigurationError, DimensionError, FormatError, \
    RepruneError
from .experiment import do_analyze, do_compare, do_oracle, do_train, \
    resume_train, summarize
from .network import Model, PruneMask, backward, evaluate, forward, \
    init_model
from .optim import LrSchedule, OptimizerState, lr_at
from .ranking import METRICS, ProbeSet, RankingScore, metric_scores, \
    oracle_scores, select_bottom
from .scheduler import CycleState, MetricsLog, ReprSchedule, RngStreams, \
    ortho_sum, run_repr
from .synth import benchmark_dataset, pattern_dataset

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "CycleState", "Dataset", "DimensionError",
    "FormatError", "LrSchedule", "METRICS", "MetricsLog", "Model",
    "OptimizerState", "ProbeSet", "PruneMask", "RankingScore",
    "ReprSchedule", "RepruneError", "RngStreams", "RunConfig",
    "assemble", "backward", "benchmark_dataset", "do_analyze",
    "do_compare", "do_oracle", "do_train", "evaluate", "forward",
    "init_model", "load_checkpoint", "load_cifar10_binary", "load_idx",
    "lr_at", "metric_scores", "oracle_scores", "ortho_sum",
    "parse_config", "pattern_dataset", "resume_train", "run_repr",
    "save_checkpoint", "select_bottom", "summarize", "validate_config",
]
