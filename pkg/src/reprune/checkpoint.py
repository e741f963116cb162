"""Self-describing binary checkpoints that restore training bit-exactly.

Layout: an ASCII version line, one JSON line of run metadata (cycle
state, RNG generator states, metrics rows so far, config echo), one JSON
manifest line listing (name, dtype, shape) for every array, then the raw
little-endian array bytes in manifest order. Arrays cover model
parameters, BN running statistics, mask bits, optimizer slots, and the
gradient-statistics accumulators, so a resumed run continues exactly
where the saved one stopped, including mid-cycle prune state.

Saving the result of a load reproduces the file byte for byte: the JSON
is emitted with sorted keys and Python's round-tripping float repr.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .network import BatchNormState, ConvLayer, Model, PruneMask
from .optim import OptimizerState
from .ranking import GradActStats
from .scheduler import CycleState, MetricsLog, RngStreams

MAGIC = b"REPRUNE-CKPT v1\n"

_DTYPES = {"f8": "<f8", "i8": "<i8", "u1": "|u1"}


def _gen_state(gen: np.random.Generator):
    return gen.bit_generator.state


def _restore_gen(state) -> np.random.Generator:
    gen = np.random.default_rng()
    gen.bit_generator.state = state
    return gen


def _collect_arrays(model, opt_state, cycle, stats):
    """Ordered (name, array, code) triples covering all run tensors."""
    out = []
    for i, layer in enumerate(model.conv_layers):
        out.append((f"conv{i}.w", layer.weights, "f8"))
        out.append((f"conv{i}.b", layer.bias, "f8"))
        if layer.bn is not None:
            out.append((f"conv{i}.gamma", layer.bn.gamma, "f8"))
            out.append((f"conv{i}.beta", layer.bn.beta, "f8"))
            out.append((f"conv{i}.bn_mean", layer.bn.running_mean, "f8"))
            out.append((f"conv{i}.bn_var", layer.bn.running_var, "f8"))
    out.append(("fc.w", model.fc_w, "f8"))
    out.append(("fc.b", model.fc_b, "f8"))
    for i, row in enumerate(cycle.mask.rows):
        out.append((f"mask{i}", row.astype(np.uint8), "u1"))
    for name in sorted(opt_state.slots):
        for slot_name in sorted(opt_state.slots[name]):
            arr = opt_state.slots[name][slot_name]
            code = "i8" if arr.dtype == np.int64 else "f8"
            out.append((f"slot.{name}.{slot_name}", arr, code))
    for i in range(len(model.conv_layers)):
        out.append((f"stats.grad_abs{i}", stats.grad_abs[i], "f8"))
        out.append((f"stats.taylor{i}", stats.taylor[i], "f8"))
        out.append((f"stats.fisher{i}", stats.fisher[i], "f8"))
    return out


def save_checkpoint(path, model, opt_state, cycle, log, stats, streams,
                    config_echo=None) -> None:
    meta = {
        "model": {
            "input_shape": list(model.input_shape),
            "num_classes": model.num_classes,
            "dropout": model.dropout,
            "layers": [
                {"filters": l.filters, "in_channels": l.in_channels,
                 "kernel": l.kernel, "batch_norm": l.bn is not None,
                 "bn_momentum": l.bn.momentum if l.bn else None,
                 "bn_epsilon": l.bn.epsilon if l.bn else None}
                for l in model.conv_layers],
        },
        "optimizer": {"rule": opt_state.rule, "hyper": opt_state.hyper},
        "cycle": {
            "phase": cycle.phase,
            "iteration": cycle.iteration,
            "epoch": cycle.epoch,
            "epoch_in_phase": cycle.epoch_in_phase,
            "dropped": [list(c) for c in cycle.dropped],
            "pending_chunks": [[list(c) for c in chunk]
                               for chunk in cycle.pending_chunks],
            "events": [[e, t] for e, t in cycle.events],
        },
        "rng": {
            "dropout": _gen_state(streams.dropout),
            "reinit": _gen_state(streams.reinit),
            "metric": _gen_state(streams.metric),
        },
        "log_csv": log.to_csv(),
        "stats_steps": stats.steps,
        "config": config_echo or {},
    }
    arrays = _collect_arrays(model, opt_state, cycle, stats)
    manifest = [[name, code, list(arr.shape)] for name, arr, code in arrays]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(meta, sort_keys=True).encode() + b"\n")
        fh.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
        for name, arr, code in arrays:
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


@dataclass
class CheckpointBundle:
    model: Model
    opt_state: OptimizerState
    cycle: CycleState
    log: MetricsLog
    stats: GradActStats
    streams: RngStreams
    config_echo: dict


def load_checkpoint(path) -> CheckpointBundle:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise FormatError(
            f"{path}: not a checkpoint (expected header "
            f"{MAGIC.decode().strip()!r})")
    rest = blob[len(MAGIC):]
    try:
        meta_line, rest = rest.split(b"\n", 1)
        manifest_line, payload = rest.split(b"\n", 1)
        meta = json.loads(meta_line)
        manifest = json.loads(manifest_line)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed checkpoint header") from exc

    arrays = {}
    offset = 0
    for name, code, shape in manifest:
        dtype = np.dtype(_DTYPES[code])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(payload):
            raise FormatError(
                f"{path}: payload truncated at array {name!r}: needed "
                f"{nbytes} bytes at offset {offset}, have "
                f"{len(payload) - offset}")
        arrays[name] = np.frombuffer(
            payload, dtype=dtype, count=count, offset=offset
        ).reshape(shape).copy()
        offset += nbytes
    if offset != len(payload):
        raise FormatError(
            f"{path}: {len(payload) - offset} trailing bytes after the "
            f"last manifest array")

    m = meta["model"]
    layers = []
    for i, spec in enumerate(m["layers"]):
        bn = None
        if spec["batch_norm"]:
            bn = BatchNormState(arrays[f"conv{i}.gamma"],
                                arrays[f"conv{i}.beta"],
                                arrays[f"conv{i}.bn_mean"],
                                arrays[f"conv{i}.bn_var"],
                                spec["bn_momentum"], spec["bn_epsilon"])
        layers.append(ConvLayer(arrays[f"conv{i}.w"], arrays[f"conv{i}.b"], bn))
    model = Model(layers, arrays["fc.w"], arrays["fc.b"],
                  tuple(m["input_shape"]), m["dropout"])
    model.validate()

    opt = OptimizerState(meta["optimizer"]["rule"], model.parameters(),
                         meta["optimizer"]["hyper"])
    for name in opt.slots:
        for slot_name in opt.slots[name]:
            opt.slots[name][slot_name] = arrays[f"slot.{name}.{slot_name}"]

    mask = PruneMask([arrays[f"mask{i}"].astype(bool)
                      for i in range(len(layers))])
    c = meta["cycle"]
    cycle = CycleState(
        mask=mask, phase=c["phase"], iteration=c["iteration"],
        epoch=c["epoch"], epoch_in_phase=c["epoch_in_phase"],
        dropped=[tuple(x) for x in c["dropped"]],
        pending_chunks=[[tuple(x) for x in chunk]
                        for chunk in c["pending_chunks"]],
        events=[(e, t) for e, t in c["events"]])

    stats = GradActStats(model)
    stats.steps = meta["stats_steps"]
    for i in range(len(layers)):
        stats.grad_abs[i] = arrays[f"stats.grad_abs{i}"]
        stats.taylor[i] = arrays[f"stats.taylor{i}"]
        stats.fisher[i] = arrays[f"stats.fisher{i}"]

    streams = RngStreams(_restore_gen(meta["rng"]["dropout"]),
                         _restore_gen(meta["rng"]["reinit"]),
                         _restore_gen(meta["rng"]["metric"]))
    log = MetricsLog.from_csv(meta["log_csv"]) if meta["log_csv"].strip() \
        else MetricsLog()
    return CheckpointBundle(model, opt, cycle, log, stats, streams,
                            meta.get("config", {}))
