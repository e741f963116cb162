"""Flat key=value run configuration.

Resolution order: built-in defaults, then the config file, then
command-line overrides, then the REPRUNE_OUT_DIR environment variable
(output directory only). Unknown keys and bad values are collected and
reported all at once rather than one per run attempt.
"""

import os

from .errors import ConfigurationError
from .optim import LrSchedule
from .ranking import METRICS
from .scheduler import ReprSchedule


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _unparse(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(f"{at!r}:{lr!r}" for at, lr in value)
    return str(value)


def _milestones(raw: str) -> list:
    """Parse "epoch:lr,epoch:lr" into sorted (epoch, lr) pairs."""
    raw = raw.strip()
    if not raw:
        return []
    pairs = []
    for part in raw.split(","):
        at, _, value = part.partition(":")
        pairs.append((float(at), float(value)))
    return sorted(pairs)


# key -> (parser, default); the parser doubles as the type spec
SCHEMA = {
    # model
    "depth": (int, 3),
    "width": (int, 8),
    "kernel": (int, 3),
    "batch_norm": (_bool, True),
    "dropout": (float, 0.0),
    "num_classes": (int, 10),
    # optimizer
    "optimizer": (str, "momentum"),
    "momentum": (float, 0.9),
    "adam_beta1": (float, 0.9),
    "adam_beta2": (float, 0.999),
    "adam_epsilon": (float, 1e-8),
    # learning rate schedule
    "lr_kind": (str, "step"),
    "lr": (float, 0.01),
    "lr_milestones": (_milestones, [(93.0, 0.003)]),
    "lr_period": (float, 50.0),
    "lr_amplitude": (float, 0.005),
    # cyclic prune/reinit schedule
    "s1": (int, 20),
    "s2": (int, 10),
    "n": (int, 3),
    "p_percent": (float, 30.0),
    "metric": (str, "ortho"),
    "reinit_scale": (float, 0.6),
    "reinit_next_layer_kernels": (_bool, True),
    "staged_prune_batches": (int, 1),
    "ortho_loss_lambda": (float, 0.0),
    # data
    "dataset": (str, "synth"),
    "train_images": (str, ""),
    "train_labels": (str, ""),
    "test_images": (str, ""),
    "test_labels": (str, ""),
    "train_files": (str, ""),
    "test_files": (str, ""),
    "train_size": (int, 10000),
    "probe_size": (int, 1000),
    "test_size": (int, 1000),
    "data_seed": (int, 7),
    "synth_size": (int, 8),
    "synth_channels": (int, 3),
    "synth_noise": (float, 2.4),
    "synth_contrast": (float, 0.16),
    "synth_components": (int, 3),
    "synth_shift": (int, 2),
    "augment": (_bool, False),
    # run
    "epochs": (int, 100),
    "batch_size": (int, 100),
    "seed": (int, 0),
    "out_dir": (str, "runs"),
    "run_name": (str, ""),
    "checkpoint_every": (int, 0),
}

ENV_OUT_DIR = "REPRUNE_OUT_DIR"


class RunConfig:
    """Attribute view over the resolved key=value map."""

    def __init__(self, values: dict):
        self.__dict__.update(values)

    def echo(self) -> dict:
        """Config as flat strings that re-parse to the same values."""
        return {k: _unparse(getattr(self, k)) for k in sorted(SCHEMA)}

    def repr_schedule(self) -> ReprSchedule:
        return ReprSchedule(
            s1=self.s1, s2=self.s2, n=self.n, p_percent=self.p_percent,
            metric=self.metric, reinit_scale=self.reinit_scale,
            reinit_next_layer_kernels=self.reinit_next_layer_kernels,
            staged_prune_batches=self.staged_prune_batches,
            ortho_loss_lambda=self.ortho_loss_lambda)

    def lr_schedule(self) -> LrSchedule:
        return LrSchedule(kind=self.lr_kind, base=self.lr,
                          milestones=list(self.lr_milestones),
                          period=self.lr_period, amplitude=self.lr_amplitude)


def _parse_pairs(lines, source, values, problems):
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        key, sep, raw = text.partition("=")
        if not sep:
            problems.append(f"{source} line {lineno}: no '=' in {text!r}")
            continue
        key = key.strip()
        raw = raw.strip()
        if key not in SCHEMA:
            problems.append(f"{source} line {lineno}: unknown key {key!r}")
            continue
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(raw)
        except ValueError as exc:
            problems.append(
                f"{source} line {lineno}: bad value for {key}: {exc}")


def parse_config(path=None, overrides=None) -> RunConfig:
    """Resolve defaults, optional file, and override pairs into a RunConfig.

    `overrides` is a mapping of key -> raw string (typically from CLI
    flags). Every unknown key, unparsable value, and invariant violation
    is reported in one ConfigurationError.
    """
    problems = []
    values = {k: default for k, (_, default) in SCHEMA.items()}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file: {exc}")
        _parse_pairs(lines, str(path), values, problems)
    for key, raw in (overrides or {}).items():
        if key not in SCHEMA:
            problems.append(f"override: unknown key {key!r}")
            continue
        try:
            values[key] = SCHEMA[key][0](str(raw))
        except ValueError as exc:
            problems.append(f"override: bad value for {key}: {exc}")
    env_out = os.environ.get(ENV_OUT_DIR)
    if env_out:
        values["out_dir"] = env_out
    cfg = RunConfig(values)
    problems.extend(validate_config(cfg))
    if problems:
        raise ConfigurationError(
            "invalid configuration:\n  " + "\n  ".join(problems))
    return cfg


def validate_config(cfg: RunConfig) -> list:
    """All invariant violations in one pass (empty list means valid)."""
    problems = []
    if cfg.depth < 1:
        problems.append("depth must be >= 1")
    if cfg.width < 1:
        problems.append("width must be >= 1")
    if cfg.kernel < 1 or cfg.kernel % 2 == 0:
        problems.append("kernel must be a positive odd size")
    if not 0.0 <= cfg.dropout < 1.0:
        problems.append("dropout must be in [0, 1)")
    if cfg.num_classes < 2:
        problems.append("num_classes must be >= 2")
    if cfg.optimizer not in ("sgd", "momentum", "adam"):
        problems.append(f"unknown optimizer {cfg.optimizer!r}")
    try:
        cfg.lr_schedule().validate()
    except ConfigurationError as exc:
        problems.append(str(exc))
    try:
        cfg.repr_schedule().validate()
    except ConfigurationError as exc:
        problems.append(str(exc))
    if cfg.dataset not in ("synth", "idx", "cifar10"):
        problems.append(f"unknown dataset kind {cfg.dataset!r}")
    if cfg.dataset == "idx":
        for key in ("train_images", "train_labels", "test_images",
                    "test_labels"):
            path = getattr(cfg, key)
            if not path:
                problems.append(f"dataset=idx needs {key}")
            elif not os.path.exists(path):
                problems.append(f"{key}: no such file {path!r}")
    if cfg.dataset == "cifar10":
        for key in ("train_files", "test_files"):
            raw = getattr(cfg, key)
            if not raw:
                problems.append(f"dataset=cifar10 needs {key}")
                continue
            for path in raw.split(","):
                if not os.path.exists(path.strip()):
                    problems.append(f"{key}: no such file {path.strip()!r}")
    if cfg.dataset == "synth" and cfg.test_size < 1:
        problems.append("dataset=synth needs test_size >= 1")
    if cfg.dataset == "synth" and cfg.synth_channels < 1:
        problems.append("synth_channels must be >= 1")
    if cfg.train_size < 1:
        problems.append("train_size must be >= 1")
    if cfg.probe_size < 0:
        problems.append("probe_size must be >= 0")
    if cfg.n > 0 and cfg.metric in ("activations", "apoz", "oracle") \
            and cfg.probe_size < 1:
        problems.append(f"metric={cfg.metric} needs probe_size >= 1")
    if cfg.epochs < 1:
        problems.append("epochs must be >= 1")
    if cfg.batch_size < 1:
        problems.append("batch_size must be >= 1")
    if cfg.seed < 0:
        problems.append("seed must be >= 0")
    if cfg.checkpoint_every < 0:
        problems.append("checkpoint_every must be >= 0")
    return problems
