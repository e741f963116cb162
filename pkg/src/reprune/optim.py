"""Update rules (sgd, momentum, adam) with per-slot resettable state.

Adam keeps a per-element step counter instead of one global t, so a
re-initialized filter restarts its own bias-correction clock while the
rest of the network keeps its history. With no resets this is identical
to textbook Adam. Masked slices are skipped outright: their parameters,
moments, velocities and counters stay bit-identical across steps.
"""

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

_CONV_PARAM = re.compile(r"^conv(\d+)\.(w|b|gamma|beta)$")


@dataclass
class LrSchedule:
    kind: str = "fixed"
    base: float = 0.01
    milestones: list = field(default_factory=list)  # (epoch, lr) pairs, step kind
    period: float = 50.0
    amplitude: float = 0.005

    def validate(self):
        if self.kind not in ("fixed", "step", "cyclic"):
            raise ConfigurationError(f"unknown lr schedule kind {self.kind!r}")
        if self.base <= 0:
            raise ConfigurationError("lr base must be positive")
        if self.kind == "step" and any(v <= 0 for _, v in self.milestones):
            raise ConfigurationError("step milestones need positive lr values")
        if self.kind == "cyclic":
            if self.period <= 0:
                raise ConfigurationError("cyclic period must be positive")
            if self.amplitude < 0 or self.base + self.amplitude <= 0:
                raise ConfigurationError("cyclic amplitude leaves lr nonpositive")


def lr_at(schedule: LrSchedule, epoch: float) -> float:
    """Learning rate at a (possibly fractional) epoch.

    step: last milestone at or before `epoch` wins (boundary inclusive).
    cyclic: triangular wave, base at the period boundaries and
    base + amplitude at the half period.
    """
    if schedule.kind == "fixed":
        return schedule.base
    if schedule.kind == "step":
        lr = schedule.base
        for at, value in sorted(schedule.milestones):
            if epoch >= at:
                lr = value
        return lr
    x = (epoch / schedule.period) % 1.0
    tri = 1.0 - abs(2.0 * x - 1.0)
    return schedule.base + schedule.amplitude * tri


ADAM_DEFAULTS = {"beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8}
MOMENTUM_DEFAULT = 0.9


class OptimizerState:
    """Rule name, hyperparameters, and per-parameter slot arrays."""

    def __init__(self, rule: str, params: dict, hyper: dict | None = None):
        if rule not in ("sgd", "momentum", "adam"):
            raise ConfigurationError(f"unknown optimizer rule {rule!r}")
        self.rule = rule
        self.hyper = dict(hyper or {})
        if rule == "momentum":
            self.hyper.setdefault("momentum", MOMENTUM_DEFAULT)
        if rule == "adam":
            for key, value in ADAM_DEFAULTS.items():
                self.hyper.setdefault(key, value)
        self.slots = {}
        for name, p in params.items():
            if rule == "momentum":
                self.slots[name] = {"velocity": np.zeros_like(p)}
            elif rule == "adam":
                self.slots[name] = {"m": np.zeros_like(p),
                                    "v": np.zeros_like(p),
                                    "t": np.zeros(p.shape, dtype=np.int64)}
            else:
                self.slots[name] = {}


def _gate_for(name: str, param: np.ndarray, mask) -> np.ndarray | None:
    """Boolean update gate broadcastable to the parameter, or None for all-live."""
    if mask is None:
        return None
    m = _CONV_PARAM.match(name)
    if m is None:
        return None  # fc params are never filter-masked
    live = mask.rows[int(m.group(1))]
    if m.group(2) == "w":
        return live[:, None, None, None]
    return live


def step(state: OptimizerState, params: dict, grads: dict, mask, lr: float):
    """One in-place update over every parameter.

    Masked slices are written around with np.copyto(..., where=gate) so
    they and their slots never change, not even by adding a zero.
    """
    for name, p in params.items():
        if p.shape != grads[name].shape:
            raise ConfigurationError(
                f"grad shape {grads[name].shape} mismatches param "
                f"{name} {p.shape}")
        g = grads[name]
        gate = _gate_for(name, p, mask)
        slot = state.slots[name]
        if state.rule == "sgd":
            _masked_write(p, p - lr * g, gate)
        elif state.rule == "momentum":
            vel = slot["velocity"]
            _masked_write(vel, state.hyper["momentum"] * vel + g, gate)
            _masked_write(p, p - lr * vel, gate)
        else:
            b1, b2 = state.hyper["beta1"], state.hyper["beta2"]
            eps = state.hyper["epsilon"]
            m, v, t = slot["m"], slot["v"], slot["t"]
            _masked_write(t, t + 1, gate)
            _masked_write(m, b1 * m + (1 - b1) * g, gate)
            _masked_write(v, b2 * v + (1 - b2) * g * g, gate)
            stepped = t > 0
            c1 = np.where(stepped, 1.0 - np.power(b1, t, dtype=np.float64), 1.0)
            c2 = np.where(stepped, 1.0 - np.power(b2, t, dtype=np.float64), 1.0)
            update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
            _masked_write(p, p - update, gate)


def _masked_write(dst, value, gate):
    if gate is None:
        np.copyto(dst, value.astype(dst.dtype, copy=False))
    else:
        np.copyto(dst, value.astype(dst.dtype, copy=False),
                  where=np.broadcast_to(gate, dst.shape))


def reset_slots(state: OptimizerState, selection, model,
                include_next_layer=False):
    """Zero the auxiliary state of every selected (layer, filter).

    Covers the filter's weight row, bias element, and BN gamma/beta
    elements. With include_next_layer, also the next layer's input-kernel
    slices for that filter; past the last conv layer that means the FC
    weight columns reading the filter's feature map. Everything else is
    untouched, bit for bit.
    """
    depth = len(model.conv_layers)
    for layer_idx, filter_idx in selection:
        if not (0 <= layer_idx < depth):
            raise ConfigurationError(f"no conv layer {layer_idx}")
        if not (0 <= filter_idx < model.conv_layers[layer_idx].filters):
            raise ConfigurationError(
                f"layer {layer_idx} has no filter {filter_idx}")
        _zero_slot_slice(state, f"conv{layer_idx}.w", (filter_idx,))
        _zero_slot_slice(state, f"conv{layer_idx}.b", (filter_idx,))
        if model.conv_layers[layer_idx].bn is not None:
            _zero_slot_slice(state, f"conv{layer_idx}.gamma", (filter_idx,))
            _zero_slot_slice(state, f"conv{layer_idx}.beta", (filter_idx,))
        if include_next_layer:
            if layer_idx + 1 < depth:
                _zero_slot_slice(state, f"conv{layer_idx + 1}.w",
                                 (slice(None), filter_idx))
            else:
                hw = model.input_shape[1] * model.input_shape[2]
                cols = slice(filter_idx * hw, (filter_idx + 1) * hw)
                _zero_slot_slice(state, "fc.w", (slice(None), cols))


def _zero_slot_slice(state, name, index):
    for arr in state.slots[name].values():
        arr[index] = 0
