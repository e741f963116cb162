"""Diagnostics: activation correlation maps, metric agreement, and the
train-test gap series.

Correlation coefficients involving a constant (zero-variance) signal are
defined as 0.0 and flagged instead of NaN, because dead filters are
routine mid-training and a NaN would poison every downstream summary.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .network import forward


def average_ranks(x) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.shape[0])
    sx = x[order]
    i = 0
    while i < x.shape[0]:
        j = i
        while j + 1 < x.shape[0] and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ConfigurationError(
            f"pearson needs two equal-length vectors, got {x.shape} and "
            f"{y.shape}")
    if x.shape[0] < 2:
        raise ConfigurationError("pearson is undefined on fewer than 2 points")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc @ xc) * (yc @ yc))
    if denom == 0.0:
        raise ConfigurationError("pearson is undefined for a constant input")
    return float((xc @ yc) / denom)


def spearman(x, y) -> float:
    """Pearson over average-rank vectors (tie-aware)."""
    return pearson(average_ranks(x), average_ranks(y))


def metric_agreement(scores_a, scores_b):
    """(pearson, spearman) between two score sets on the same filters.

    Accepts RankingScore lists (aligned by (layer, filter), which must
    match exactly) or plain already-aligned vectors.
    """
    if hasattr(scores_a[0] if len(scores_a) else None, "layer"):
        a_map = {(s.layer, s.filter): s.value for s in scores_a}
        b_map = {(s.layer, s.filter): s.value for s in scores_b}
        if a_map.keys() != b_map.keys():
            raise ConfigurationError(
                "score sets cover different filter coordinates")
        coords = sorted(a_map)
        a = np.array([a_map[c] for c in coords])
        b = np.array([b_map[c] for c in coords])
    else:
        a = np.asarray(scores_a, dtype=np.float64)
        b = np.asarray(scores_b, dtype=np.float64)
    return pearson(a, b), spearman(a, b)


@dataclass
class CorrelationReport:
    matrix: np.ndarray          # [F, F] in [-1, 1]
    layer_boundaries: list      # first filter index of each layer
    method: str                 # pearson | cca
    signal: str                 # post | pre (ReLU)
    constant_flags: np.ndarray  # [F] True where the signature was constant
    labels: list                # "layer:filter" per row/column

    def to_csv(self) -> str:
        lines = ["," + ",".join(self.labels)]
        for label, row in zip(self.labels, self.matrix):
            lines.append(label + "," + ",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def _gather_activations(model, mask, probe, signal, batch_size=500):
    """Per-filter probe responses: spatial means [n, F] and, for CCA,
    full spatial vectors per layer."""
    means = []
    spatial = []
    for start in range(0, probe.size, batch_size):
        stop = min(start + batch_size, probe.size)
        _, cache = forward(model, mask, probe.inputs[start:stop], mode="eval")
        acts = cache.post_act if signal == "post" else cache.pre_act
        means.append(np.concatenate(
            [a.mean(axis=(2, 3)) for a in acts], axis=1))
        spatial.append([a.reshape(a.shape[0], a.shape[1], -1) for a in acts])
    mean_matrix = np.concatenate(means, axis=0)  # [n, F]
    per_layer = []
    for layer_idx in range(len(model.conv_layers)):
        per_layer.append(np.concatenate([s[layer_idx] for s in spatial]))
    return mean_matrix, per_layer


def _first_canonical(x, y, rtol=1e-8):
    """Largest canonical correlation between column blocks x and y [n, *].

    Whitens each block by SVD with singular values below rtol * max
    truncated; a zero-rank block reports (0.0, True)."""
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    ux, sx, _ = np.linalg.svd(xc, full_matrices=False)
    uy, sy, _ = np.linalg.svd(yc, full_matrices=False)
    kx = sx > (rtol * sx[0] if sx.size and sx[0] > 0 else np.inf)
    ky = sy > (rtol * sy[0] if sy.size and sy[0] > 0 else np.inf)
    if not kx.any() or not ky.any():
        return 0.0, True
    cross = ux[:, kx].T @ uy[:, ky]
    rho = np.linalg.svd(cross, compute_uv=False)[0]
    return float(min(rho, 1.0)), False


def activation_correlation(model, mask, probe, method="pearson",
                           signal="post") -> CorrelationReport:
    """Pairwise filter-response correlation over a probe set.

    pearson: each filter's signature is the spatial mean of its map per
    probe example; coefficients are plain Pearson between signatures.
    cca: each filter keeps its full per-example spatial vector and pairs
    report their first canonical correlation (always in [0, 1]).

    signal picks post-ReLU maps (default) or pre-activation maps; the
    latter is where linear relations like sign flips stay visible.
    """
    if method not in ("pearson", "cca"):
        raise ConfigurationError(f"unknown correlation method {method!r}")
    if signal not in ("post", "pre"):
        raise ConfigurationError(f"unknown signal {signal!r}")
    if probe.size == 0:
        raise ConfigurationError("correlation needs a non-empty probe")
    mean_matrix, per_layer = _gather_activations(model, mask, probe, signal)
    counts = [layer.filters for layer in model.conv_layers]
    boundaries = list(np.cumsum([0] + counts[:-1]))
    labels = [f"{li}:{f}" for li, c in enumerate(counts) for f in range(c)]
    total = sum(counts)

    if method == "pearson":
        sig = mean_matrix.T  # [F, n]
        centered = sig - sig.mean(axis=1, keepdims=True)
        norms = np.sqrt((centered * centered).sum(axis=1))
        flags = norms == 0.0
        unit = centered / np.where(flags, 1.0, norms)[:, None]
        matrix = unit @ unit.T
        matrix = 0.5 * (matrix + matrix.T)
        matrix = np.clip(matrix, -1.0, 1.0)
        matrix[flags, :] = 0.0
        matrix[:, flags] = 0.0
        d = np.where(flags, 0.0, 1.0)
        matrix[np.arange(total), np.arange(total)] = d
        return CorrelationReport(matrix, boundaries, method, signal, flags,
                                 labels)

    blocks = []
    for layer_acts in per_layer:  # [n, J, hw] -> per-filter [n, hw]
        for f in range(layer_acts.shape[1]):
            blocks.append(layer_acts[:, f, :])
    matrix = np.zeros((total, total))
    flags = np.zeros(total, dtype=bool)
    for i in range(total):
        rho, flag = _first_canonical(blocks[i], blocks[i])
        flags[i] = flag
        matrix[i, i] = 0.0 if flag else 1.0
    for i in range(total):
        for j in range(i + 1, total):
            if flags[i] or flags[j]:
                rho = 0.0
            else:
                rho, _ = _first_canonical(blocks[i], blocks[j])
            matrix[i, j] = rho
            matrix[j, i] = rho
    return CorrelationReport(matrix, boundaries, method, signal, flags, labels)


def generalization_gap(log):
    """Per-epoch train-test accuracy gap and its mean over the last 5 rows."""
    train = np.asarray(log.column("train_acc"), dtype=np.float64)
    test = np.asarray(log.column("test_acc"), dtype=np.float64)
    gaps = train - test
    if gaps.size == 0:
        raise ConfigurationError("metrics log has no rows")
    tail = gaps[-5:] if gaps.size >= 5 else gaps
    return gaps, float(tail.mean())
