"""Wires a RunConfig into datasets, models, and finished training runs.

The four flows the command line exposes live here so they can be driven
programmatically: single runs (with optional periodic checkpoints and
resume), paired standard-vs-cyclic comparisons sharing one init, oracle
scoring of a checkpoint, and the correlation/agreement analysis bundle.
"""

import os
from dataclasses import dataclass

import numpy as np

from .analysis import activation_correlation, generalization_gap, \
    metric_agreement
from .checkpoint import CheckpointBundle, load_checkpoint, save_checkpoint
from .config import RunConfig, SCHEMA, parse_config
from .data import Dataset, assemble, load_cifar10_binary, load_idx
from .errors import ConfigurationError
from .network import PruneMask, evaluate, init_model
from .optim import OptimizerState
from .ranking import GradActStats, ProbeSet, collect_probe_stats, \
    metric_scores, oracle_scores, scores_to_csv
from .scheduler import CycleState, MetricsLog, RngStreams, ortho_sum, \
    run_repr
from .synth import benchmark_dataset


def load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.dataset == "synth":
        return benchmark_dataset(
            cfg.data_seed, train=cfg.train_size, probe=cfg.probe_size,
            test=cfg.test_size, size=cfg.synth_size, classes=cfg.num_classes,
            components=cfg.synth_components, channels=cfg.synth_channels,
            noise=cfg.synth_noise, shift=cfg.synth_shift,
            contrast=cfg.synth_contrast)
    if cfg.dataset == "idx":
        train_pool = load_idx(cfg.train_images, cfg.train_labels)
        test_pool = load_idx(cfg.test_images, cfg.test_labels)
    else:
        train_pool = load_cifar10_binary(
            [p.strip() for p in cfg.train_files.split(",")])
        test_pool = load_cifar10_binary(
            [p.strip() for p in cfg.test_files.split(",")])
    train_pool.num_classes = cfg.num_classes
    test_pool.num_classes = cfg.num_classes
    if cfg.test_size > 0 and cfg.test_size < test_pool.size:
        test_pool = Dataset(test_pool.images[:cfg.test_size],
                            test_pool.labels[:cfg.test_size],
                            {"all": np.arange(cfg.test_size)},
                            cfg.num_classes)
    return assemble(train_pool, test_pool, train_size=cfg.train_size,
                    probe_size=cfg.probe_size)


def optimizer_hyper(cfg: RunConfig) -> dict:
    if cfg.optimizer == "momentum":
        return {"momentum": cfg.momentum}
    if cfg.optimizer == "adam":
        return {"beta1": cfg.adam_beta1, "beta2": cfg.adam_beta2,
                "epsilon": cfg.adam_epsilon}
    return {}


@dataclass
class RunResult:
    model: object
    opt_state: OptimizerState
    cycle: CycleState
    log: MetricsLog
    stats: GradActStats
    streams: RngStreams
    dataset: Dataset
    probe: ProbeSet | None
    run_dir: str | None


def summarize(log: MetricsLog) -> dict:
    test = log.column("test_acc")
    _, tail_gap = generalization_gap(log)
    return {
        "final_test_acc": test[-1],
        "best_test_acc": max(test),
        "final_train_acc": log.column("train_acc")[-1],
        "gap_last5": tail_gap,
        "final_ortho_sum": log.column("ortho_sum")[-1],
    }


def _write(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _events_text(cycle: CycleState) -> str:
    return "".join(f"{epoch}\t{text}\n" for epoch, text in cycle.events)


def do_train(cfg: RunConfig, run_dir=None, dataset=None) -> RunResult:
    """One full training run; writes metrics.csv, events.txt, final.ckpt."""
    ds = dataset if dataset is not None else load_dataset(cfg)
    probe = None
    if cfg.probe_size > 0:
        probe = ProbeSet(*ds.split_arrays("probe"))
    init_rng, streams = RngStreams.from_seed(cfg.seed)
    model = init_model(cfg.depth, cfg.width, ds.images.shape[1:],
                       num_classes=cfg.num_classes, kernel=cfg.kernel,
                       batch_norm=cfg.batch_norm, dropout=cfg.dropout,
                       rng=init_rng)
    opt_state = OptimizerState(cfg.optimizer, model.parameters(),
                               optimizer_hyper(cfg))
    cycle = CycleState(mask=PruneMask.full(model))
    log = MetricsLog()
    stats = GradActStats(model)
    return _drive(cfg, ds, probe, model, opt_state, cycle, log, stats,
                  streams, run_dir)


def resume_train(ckpt_path, overrides=None, run_dir=None) -> RunResult:
    """Continue a checkpointed run under its stored configuration.

    With run_dir=None the directory is re-derived from the (possibly
    overridden) config, same as a fresh `train` would use.
    """
    bundle = load_checkpoint(ckpt_path)
    if not bundle.config_echo:
        raise ConfigurationError(
            f"{ckpt_path} carries no configuration echo; pass the full "
            f"config instead")
    merged = dict(bundle.config_echo)
    merged.update(overrides or {})
    cfg = parse_config(overrides=merged)
    if run_dir is None:
        run_dir = default_run_dir(cfg, "train")
    ds = load_dataset(cfg)
    probe = None
    if cfg.probe_size > 0:
        probe = ProbeSet(*ds.split_arrays("probe"))
    return _drive(cfg, ds, probe, bundle.model, bundle.opt_state,
                  bundle.cycle, bundle.log, bundle.stats, bundle.streams,
                  run_dir)


def default_run_dir(cfg: RunConfig, command: str) -> str:
    name = cfg.run_name or f"{command}-seed{cfg.seed}"
    return os.path.join(cfg.out_dir, name)


def _drive(cfg, ds, probe, model, opt_state, cycle, log, stats, streams,
           run_dir) -> RunResult:
    if run_dir:
        os.makedirs(run_dir, exist_ok=True)

    def snapshot(path):
        save_checkpoint(path, model, opt_state, cycle, log, stats, streams,
                        config_echo=cfg.echo())

    hook = None
    if run_dir and cfg.checkpoint_every > 0:
        def hook():
            if cycle.epoch % cfg.checkpoint_every == 0:
                snapshot(os.path.join(run_dir, f"epoch{cycle.epoch}.ckpt"))

    run_repr(model, opt_state, cfg.repr_schedule(), ds, cfg.lr_schedule(),
             cfg.epochs, cfg.batch_size, cfg.seed, streams, probe=probe,
             augment=cfg.augment, cycle=cycle, log=log, stats=stats,
             epoch_hook=hook)
    if run_dir:
        _write(os.path.join(run_dir, "metrics.csv"), log.to_csv())
        _write(os.path.join(run_dir, "events.txt"), _events_text(cycle))
        snapshot(os.path.join(run_dir, "final.ckpt"))
    return RunResult(model, opt_state, cycle, log, stats, streams, ds,
                     probe, run_dir)


def do_compare(cfg: RunConfig, out_dir=None) -> dict:
    """Standard (n=0) vs cyclic run from one shared seed and init.

    Both arms construct their model from identical generator states, so
    any divergence is the training scheme itself. Returns the two
    summaries plus file locations; writes a joint per-epoch CSV.
    """
    ds = load_dataset(cfg)
    std_cfg = parse_config(overrides={**_echo_raw(cfg), "n": "0"})
    std_dir = os.path.join(out_dir, "standard") if out_dir else None
    rep_dir = os.path.join(out_dir, "repr") if out_dir else None
    standard = do_train(std_cfg, run_dir=std_dir, dataset=ds)
    cyclic = do_train(cfg, run_dir=rep_dir, dataset=ds)
    joint = _joint_csv(standard.log, cyclic.log)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        _write(os.path.join(out_dir, "compare.csv"), joint)
    return {
        "standard": summarize(standard.log),
        "repr": summarize(cyclic.log),
        "joint_csv": joint,
        "standard_run": standard,
        "repr_run": cyclic,
    }


def _echo_raw(cfg) -> dict:
    # echo() values round-trip through the schema parsers
    return cfg.echo()


def _joint_csv(std_log: MetricsLog, rep_log: MetricsLog) -> str:
    lines = ["epoch,std_train_acc,std_test_acc,std_ortho_sum,"
             "repr_train_acc,repr_test_acc,repr_ortho_sum,repr_live_filters"]
    for std_row, rep_row in zip(std_log.rows, rep_log.rows):
        cols = MetricsLog.COLUMNS
        get = lambda row, name: row[cols.index(name)]
        lines.append(",".join([
            str(int(get(std_row, "epoch"))),
            repr(float(get(std_row, "train_acc"))),
            repr(float(get(std_row, "test_acc"))),
            repr(float(get(std_row, "ortho_sum"))),
            repr(float(get(rep_row, "train_acc"))),
            repr(float(get(rep_row, "test_acc"))),
            repr(float(get(rep_row, "ortho_sum"))),
            str(int(get(rep_row, "live_filters"))),
        ]))
    return "\n".join(lines) + "\n"


def do_oracle(cfg: RunConfig, ckpt_path, out_dir=None) -> dict:
    """Greedy ablation scores for a saved model, written as CSV."""
    bundle = load_checkpoint(ckpt_path)
    ds = load_dataset(cfg)
    if cfg.probe_size < 1:
        raise ConfigurationError("oracle scoring needs probe_size >= 1")
    probe = ProbeSet(*ds.split_arrays("probe"))
    scores = oracle_scores(bundle.model, bundle.cycle.mask, probe)
    csv_text = scores_to_csv(scores)
    path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "oracle.csv")
        _write(path, csv_text)
    return {"scores": scores, "csv": csv_text, "path": path}


def do_analyze(cfg: RunConfig, ckpt_path, out_dir=None) -> dict:
    """Correlation maps plus every-metric-vs-oracle agreement table."""
    bundle = load_checkpoint(ckpt_path)
    ds = load_dataset(cfg)
    if cfg.probe_size < 1:
        raise ConfigurationError("analysis needs probe_size >= 1")
    probe = ProbeSet(*ds.split_arrays("probe"))
    model, mask = bundle.model, bundle.cycle.mask

    reports = {
        "pearson": activation_correlation(model, mask, probe,
                                          method="pearson"),
        "cca": activation_correlation(model, mask, probe, method="cca"),
    }
    oracle = oracle_scores(model, mask, probe)
    recorded = collect_probe_stats(model, mask, probe)
    rng = np.random.default_rng(cfg.seed)
    agreement = {}
    for metric in ("ortho", "weights", "activations", "apoz", "gradients",
                   "taylor", "hessian", "random"):
        scores = metric_scores(model, mask, metric, probe=probe,
                               recorded=recorded, rng=rng)
        agreement[metric] = metric_agreement(scores, oracle)

    lines = ["metric,pearson,spearman"]
    for metric, (pe, sp) in agreement.items():
        lines.append(f"{metric},{pe!r},{sp!r}")
    agreement_csv = "\n".join(lines) + "\n"

    paths = {}
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        for name, report in reports.items():
            paths[name] = os.path.join(out_dir, f"correlation_{name}.csv")
            _write(paths[name], report.to_csv())
        paths["agreement"] = os.path.join(out_dir, "agreement.csv")
        _write(paths["agreement"], agreement_csv)
    return {"reports": reports, "agreement": agreement,
            "agreement_csv": agreement_csv, "paths": paths}
