"""Filter importance: the full metric catalog and the global bottom-p% pick.

Every metric reports importance under one convention: LOWER value means
the filter is dropped sooner. Metrics whose natural reading is "higher is
worse" (overlap, zero fraction) are negated here so the selector never
branches per metric.

Data-driven metrics split two ways. activations/apoz/oracle evaluate a
held-out probe set directly. gradients/taylor/hessian read a GradActStats
that training accumulated over recent steps; use collect_probe_stats to
build one from a checkpoint after the fact.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .network import ConvLayer, evaluate, filter_matrix, forward, backward
from .tensor import as_tensor, row_normalize

METRICS = ("ortho", "weights", "activations", "apoz", "gradients",
           "taylor", "hessian", "random", "oracle")
# the subset that reads GradActStats accumulated over training steps
STAT_METRICS = ("gradients", "taylor", "hessian")


@dataclass
class RankingScore:
    layer: int
    filter: int
    value: float
    metric: str


@dataclass
class ProbeSet:
    """Held-out inputs/labels, disjoint from training by construction."""
    inputs: np.ndarray
    labels: np.ndarray

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


def ortho_matrix(bank):
    """P = |W_hat @ W_hat.T - I| with rows unit-normalized.

    Accepts a ConvLayer or a raw [J, D] matrix. Returns (P, zero_rows);
    zero_rows flags all-zero filters, whose diagonal entry is 1 (the zero
    vector is not unit-normalizable) so callers can treat them specially.
    The diagonal is exactly 0 for nonzero rows and P is exactly symmetric.
    """
    w = filter_matrix(bank) if isinstance(bank, ConvLayer) else as_tensor(bank)
    w_hat, zero_rows = row_normalize(w)
    j = w.shape[0]
    m = w_hat @ w_hat.T
    m = 0.5 * (m + m.T)
    p = np.abs(m - np.eye(j))
    p[np.arange(j), np.arange(j)] = np.where(zero_rows, 1.0, 0.0)
    return p, zero_rows


def ortho_score(bank):
    """Per-filter overlap: row sum of P divided by the filter count.

    Higher means more redundant. Returns (scores, zero_rows).
    """
    p, zero_rows = ortho_matrix(bank)
    return p.sum(axis=1) / p.shape[0], zero_rows


class GradActStats:
    """Running per-filter means over training steps, for the metrics that
    need gradients: mean |dL/dw|, the signed Taylor term, and a squared-
    gradient (empirical Fisher) diagonal for the Hessian surrogate.
    """

    def __init__(self, model):
        self.steps = 0
        self.grad_abs = [np.zeros(l.filters) for l in model.conv_layers]
        self.taylor = [np.zeros(l.filters) for l in model.conv_layers]
        self.fisher = [np.zeros_like(l.weights) for l in model.conv_layers]

    def reset(self):
        self.steps = 0
        for arr in (*self.grad_abs, *self.taylor, *self.fisher):
            arr[:] = 0.0

    def update(self, model, cache, grads):
        """Fold in one step; cache must come from a backward call."""
        if cache.grad_post_act is None:
            raise ConfigurationError(
                "stats update needs a cache that went through backward")
        self.steps += 1
        n = self.steps
        for i in range(len(model.conv_layers)):
            dw = grads[f"conv{i}.w"]
            ga = np.abs(dw).mean(axis=(1, 2, 3))
            ty = (cache.post_act[i] * cache.grad_post_act[i]).mean(axis=(0, 2, 3))
            self.grad_abs[i] += (ga - self.grad_abs[i]) / n
            self.taylor[i] += (ty - self.taylor[i]) / n
            self.fisher[i] += (dw * dw - self.fisher[i]) / n


def collect_probe_stats(model, mask, probe: ProbeSet,
                        batch_size=200) -> GradActStats:
    """Build GradActStats from probe passes, leaving the model untouched.

    Runs train-mode forward/backward without applying updates; BN running
    statistics and the dropout setting are restored afterwards.
    """
    stats = GradActStats(model)
    saved_bn = [(l.bn.running_mean.copy(), l.bn.running_var.copy())
                for l in model.conv_layers if l.bn is not None]
    saved_dropout = model.dropout
    model.dropout = 0.0
    try:
        for start in range(0, probe.size, batch_size):
            stop = min(start + batch_size, probe.size)
            _, cache = forward(model, mask, probe.inputs[start:stop],
                               mode="train")
            _, grads = backward(model, mask, cache, probe.labels[start:stop])
            stats.update(model, cache, grads)
    finally:
        model.dropout = saved_dropout
        it = iter(saved_bn)
        for layer in model.conv_layers:
            if layer.bn is not None:
                rm, rv = next(it)
                layer.bn.running_mean[:] = rm
                layer.bn.running_var[:] = rv
    return stats


def _live_coords(mask):
    for i, row in enumerate(mask.rows):
        for f in np.flatnonzero(row):
            yield i, int(f)


def _probe_activations(model, mask, probe, batch_size=500):
    """Per-filter (mean spatial L2, zero fraction) of post-ReLU maps."""
    norm_sums = [np.zeros(l.filters) for l in model.conv_layers]
    zero_counts = [0.0] * len(model.conv_layers)
    zero_sums = [np.zeros(l.filters) for l in model.conv_layers]
    for start in range(0, probe.size, batch_size):
        stop = min(start + batch_size, probe.size)
        _, cache = forward(model, mask, probe.inputs[start:stop], mode="eval")
        for i, act in enumerate(cache.post_act):
            norm_sums[i] += np.sqrt((act * act).sum(axis=(2, 3))).sum(axis=0)
            zero_sums[i] += (act == 0.0).sum(axis=(0, 2, 3))
            zero_counts[i] += act.shape[0] * act.shape[2] * act.shape[3]
    mean_norm = [s / probe.size for s in norm_sums]
    zero_frac = [zs / zc for zs, zc in zip(zero_sums, zero_counts)]
    return mean_norm, zero_frac


def oracle_scores(model, mask, probe: ProbeSet) -> list:
    """Greedy one-at-a-time ablation: importance = probe accuracy drop.

    Masks one live filter on top of the current mask, re-evaluates the
    probe, and records base_acc - masked_acc. Costs one full probe pass
    per live filter.
    """
    if probe.size == 0:
        raise ConfigurationError("oracle needs a non-empty probe set")
    _, base_acc = evaluate(model, mask, probe.inputs, probe.labels)
    scores = []
    for layer_idx, filter_idx in _live_coords(mask):
        trial = mask.copy()
        trial.rows[layer_idx][filter_idx] = False
        _, acc = evaluate(model, trial, probe.inputs, probe.labels)
        scores.append(RankingScore(layer_idx, filter_idx,
                                   base_acc - acc, "oracle"))
    return scores


def metric_scores(model, mask, metric: str, probe=None, recorded=None,
                  rng=None) -> list:
    """Importance of every live filter under the named metric."""
    if metric not in METRICS:
        raise ConfigurationError(
            f"unknown metric {metric!r}; pick one of {', '.join(METRICS)}")
    if metric == "oracle":
        if probe is None:
            raise ConfigurationError("oracle metric needs a probe set")
        return oracle_scores(model, mask, probe)
    if metric in ("activations", "apoz"):
        if probe is None:
            raise ConfigurationError(f"{metric} metric needs a probe set")
        mean_norm, zero_frac = _probe_activations(model, mask, probe)
    if metric in ("gradients", "taylor", "hessian"):
        if recorded is None or recorded.steps == 0:
            raise ConfigurationError(
                f"{metric} metric needs recorded gradient statistics")
    if metric == "random":
        if rng is None:
            raise ConfigurationError("random metric needs a generator")

    scores = []
    ortho_cache = {}
    for layer_idx, filter_idx in _live_coords(mask):
        layer = model.conv_layers[layer_idx]
        if metric == "weights":
            w = layer.weights[filter_idx]
            value = float(np.sqrt((w * w).sum()))
        elif metric == "activations":
            value = float(mean_norm[layer_idx][filter_idx])
        elif metric == "apoz":
            value = -float(zero_frac[layer_idx][filter_idx])
        elif metric == "gradients":
            value = float(recorded.grad_abs[layer_idx][filter_idx])
        elif metric == "taylor":
            value = abs(float(recorded.taylor[layer_idx][filter_idx]))
        elif metric == "hessian":
            w = layer.weights[filter_idx]
            fisher = recorded.fisher[layer_idx][filter_idx]
            value = 0.5 * float((fisher * w * w).sum())
        elif metric == "random":
            value = float(rng.random())
        else:  # ortho
            if layer_idx not in ortho_cache:
                live = mask.rows[layer_idx]
                bank = filter_matrix(layer)[live]
                s, zero_rows = ortho_score(bank)
                full_s = np.empty(layer.filters)
                full_s[live] = s
                full_zero = np.zeros(layer.filters, dtype=bool)
                full_zero[live] = zero_rows
                ortho_cache[layer_idx] = (full_s, full_zero)
            s, zero_rows = ortho_cache[layer_idx]
            # an all-zero filter overlaps nothing but carries nothing;
            # pin it strictly below every reachable -score (> -1)
            value = -1.0 if zero_rows[filter_idx] else -float(s[filter_idx])
        if not np.isfinite(value):
            raise ConfigurationError(
                f"metric {metric} produced a non-finite value for filter "
                f"({layer_idx},{filter_idx})")
        scores.append(RankingScore(layer_idx, filter_idx, value, metric))
    return scores


def select_bottom(scores: list, p_percent: float) -> list:
    """Globally lowest floor(p% of live) filters, as ordered (layer, filter).

    Ties break by (layer, filter) ascending. A filter whose removal would
    leave its layer empty is skipped and the next candidate is taken, so
    the result can be shorter than the quota. Output order is ascending
    importance, which is also the staged-pruning application order.
    """
    if not 0 < p_percent < 100:
        raise ConfigurationError("p_percent must be strictly between 0 and 100")
    quota = int(np.floor(p_percent / 100.0 * len(scores)))
    remaining = {}
    for s in scores:
        remaining[s.layer] = remaining.get(s.layer, 0) + 1
    picked = []
    for s in sorted(scores, key=lambda s: (s.value, s.layer, s.filter)):
        if len(picked) == quota:
            break
        if remaining[s.layer] <= 1:
            continue
        picked.append((s.layer, s.filter))
        remaining[s.layer] -= 1
    return picked


def scores_to_csv(scores: list) -> str:
    """CSV text (metric, layer, filter, value, rank); rank 0 drops first."""
    order = sorted(scores, key=lambda s: (s.value, s.layer, s.filter))
    lines = ["metric,layer,filter,value,rank"]
    for rank, s in enumerate(order):
        lines.append(f"{s.metric},{s.layer},{s.filter},{s.value!r},{rank}")
    return "\n".join(lines) + "\n"
