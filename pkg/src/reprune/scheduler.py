"""The cyclic training driver: train full, rank, prune, train sub, reinit.

One run is a sequence of phase spans. With s1/s2/n and a budget of E
epochs the timeline is n repetitions of (full s1, sub s2) followed by a
residual full span up to E, so the default 20/10/3 with E=100 puts its
boundaries at 20/30/50/60/80/90. Ranking and pruning happen on entry to a
sub span; re-initialization, mask restore and state resets happen on
entry to the following full span. n=0 degenerates to plain training on
the same code path, consuming the same random streams.

Also home to the orthogonality penalty (differentiable, added to the
cross-entropy when lambda > 0) and the network-wide overlap total that
the per-epoch log tracks.
"""

from dataclasses import dataclass, field

import numpy as np

from .data import make_batches
from .errors import ConfigurationError, RepruneError
from .network import PruneMask, backward, evaluate, filter_matrix, forward, \
    set_filter_row
from .optim import lr_at, reset_slots, step as optim_step
from .ranking import METRICS, GradActStats, metric_scores, ortho_score, \
    select_bottom
from .tensor import null_space_basis, row_normalize, rowspace_residual


@dataclass
class RngStreams:
    """The named generators one run consumes besides batch shuffling.

    Keeping them separate means a run with n=0 and a run with n>0 draw the
    same dropout/batch randomness: pruning and re-initialization never
    shift the training stream.
    """
    dropout: np.random.Generator
    reinit: np.random.Generator
    metric: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int):
        """(init_rng, streams): init_rng is consumed by model construction."""
        init_ss, dropout_ss, reinit_ss, metric_ss = \
            np.random.SeedSequence(seed).spawn(4)
        return np.random.default_rng(init_ss), cls(
            np.random.default_rng(dropout_ss),
            np.random.default_rng(reinit_ss),
            np.random.default_rng(metric_ss))


@dataclass
class ReprSchedule:
    s1: int = 20
    s2: int = 10
    n: int = 3
    p_percent: float = 30.0
    metric: str = "ortho"
    reinit_scale: float = 1.0
    reinit_next_layer_kernels: bool = True
    staged_prune_batches: int = 1
    ortho_loss_lambda: float = 0.0

    def validate(self):
        problems = []
        if self.s1 < 1:
            problems.append("s1 must be >= 1")
        if self.s2 < 1:
            problems.append("s2 must be >= 1")
        if self.n < 0:
            problems.append("n must be >= 0")
        if not 0 < self.p_percent < 100:
            problems.append("p_percent must be strictly between 0 and 100")
        if self.metric not in METRICS:
            problems.append(f"unknown metric {self.metric!r}")
        if self.reinit_scale <= 0:
            problems.append("reinit_scale must be positive")
        if self.staged_prune_batches < 1:
            problems.append("staged_prune_batches must be >= 1")
        if self.ortho_loss_lambda < 0:
            problems.append("ortho_loss_lambda must be >= 0")
        if problems:
            raise ConfigurationError("; ".join(problems))


@dataclass
class CycleState:
    mask: PruneMask
    phase: str = "full"
    iteration: int = 0
    epoch: int = 0                 # next epoch to run
    epoch_in_phase: int = 0
    dropped: list = field(default_factory=list)
    pending_chunks: list = field(default_factory=list)
    events: list = field(default_factory=list)  # (epoch, text)

    def log_event(self, epoch: int, text: str):
        self.events.append((epoch, text))


class MetricsLog:
    """Per-epoch training record with a stable CSV schema."""

    COLUMNS = ("epoch", "phase", "iteration", "train_acc", "test_acc",
               "train_loss", "ortho_sum", "live_filters", "lr")
    _INT = {"epoch", "iteration", "live_filters"}
    _STR = {"phase"}

    def __init__(self, rows=None):
        self.rows = list(rows) if rows else []

    def append(self, **kw):
        if set(kw) != set(self.COLUMNS):
            missing = set(self.COLUMNS) - set(kw)
            extra = set(kw) - set(self.COLUMNS)
            raise TypeError(f"append needs exactly the schema columns "
                            f"(missing {sorted(missing)}, "
                            f"unknown {sorted(extra)})")
        self.rows.append(tuple(kw[c] for c in self.COLUMNS))

    def column(self, name):
        i = self.COLUMNS.index(name)
        return [row[i] for row in self.rows]

    def to_csv(self) -> str:
        lines = [",".join(self.COLUMNS)]
        for row in self.rows:
            parts = []
            for name, value in zip(self.COLUMNS, row):
                if name in self._STR:
                    parts.append(str(value))
                elif name in self._INT:
                    parts.append(str(int(value)))
                else:
                    parts.append(repr(float(value)))
            lines.append(",".join(parts))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "MetricsLog":
        lines = [l for l in text.splitlines() if l]
        if not lines or lines[0] != ",".join(cls.COLUMNS):
            raise ConfigurationError("metrics CSV header does not match schema")
        rows = []
        for line in lines[1:]:
            parts = line.split(",")
            row = []
            for name, raw in zip(cls.COLUMNS, parts):
                if name in cls._STR:
                    row.append(raw)
                elif name in cls._INT:
                    row.append(int(raw))
                else:
                    row.append(float(raw))
            rows.append(tuple(row))
        return cls(rows)


def phase_timeline(schedule: ReprSchedule, epochs: int):
    """Spans (phase, iteration, start, stop) truncated to the budget."""
    spans = []
    t = 0
    for it in range(schedule.n):
        spans.append(("full", it, t, t + schedule.s1))
        t += schedule.s1
        spans.append(("sub", it, t, t + schedule.s2))
        t += schedule.s2
    spans.append(("full", schedule.n, t, epochs))
    out = []
    for phase, it, a, b in spans:
        if a >= epochs:
            break
        out.append((phase, it, a, min(b, epochs)))
    return out


def staged_prune(selection: list, batches: int) -> list:
    """Partition a prune selection into near-equal chunks, remainder first.

    The selection arrives in ascending importance order and is consumed
    one chunk per training step; batches=1 is instantaneous pruning.
    """
    if batches < 1:
        raise ConfigurationError("staged_prune needs batches >= 1")
    if not selection:
        return []
    base, rem = divmod(len(selection), batches)
    sizes = [base + 1] * rem + [base] * (batches - rem)
    chunks = []
    at = 0
    for size in sizes:
        if size == 0:
            continue
        chunks.append(list(selection[at:at + size]))
        at += size
    return chunks


def ortho_loss(model, mask=None) -> float:
    """Total elementwise |W_hat W_hat^T - I| over (live) filter banks."""
    total = 0.0
    for i, layer in enumerate(model.conv_layers):
        bank = filter_matrix(layer)
        if mask is not None:
            bank = bank[mask.rows[i]]
        if bank.shape[0] == 0:
            continue
        p, _ = _penalty_matrix(bank)
        total += float(p.sum())
    return total


def _penalty_matrix(bank):
    u, zero_rows = row_normalize(bank)
    j = bank.shape[0]
    m = u @ u.T
    m = 0.5 * (m + m.T)
    p = np.abs(m - np.eye(j))
    p[np.arange(j), np.arange(j)] = np.where(zero_rows, 1.0, 0.0)
    return p, (u, m, zero_rows)


def ortho_loss_grads(model, mask=None):
    """Penalty value and its analytic weight gradients.

    For unit rows u_i the loss is sum of |u_i . u_j| over i != j; the
    gradient w.r.t. w_i is the tangential part of 2 sum_j sign(u_i.u_j) u_j
    scaled by 1/|w_i|. All-zero rows get zero gradient (subgradient
    choice). Gradients cover conv weights only; rows masked dead are zero.
    """
    total = 0.0
    grads = {}
    for i, layer in enumerate(model.conv_layers):
        full_bank = filter_matrix(layer)
        live = mask.rows[i] if mask is not None else \
            np.ones(layer.filters, dtype=bool)
        bank = full_bank[live]
        out = np.zeros_like(full_bank)
        if bank.shape[0] > 0:
            p, (u, m, zero_rows) = _penalty_matrix(bank)
            total += float(p.sum())
            s = np.sign(m - np.eye(bank.shape[0]))
            np.fill_diagonal(s, 0.0)
            g = 2.0 * (s @ u)
            radial = (u * g).sum(axis=1, keepdims=True)
            norms = np.sqrt((bank * bank).sum(axis=1))
            safe = np.where(zero_rows, 1.0, norms)
            gw = (g - radial * u) / safe[:, None]
            gw[zero_rows] = 0.0
            out[live] = gw
        grads[f"conv{i}.w"] = out.reshape(layer.weights.shape)
    return total, grads


def ortho_sum(model, mask=None) -> float:
    """Network-wide overlap total: sum of per-filter scores on live banks."""
    total = 0.0
    for i, layer in enumerate(model.conv_layers):
        bank = filter_matrix(layer)
        if mask is not None:
            bank = bank[mask.rows[i]]
        if bank.shape[0] == 0:
            continue
        s, _ = ortho_score(bank)
        total += float(s.sum())
    return total


@dataclass
class ReinitRecord:
    layer: int
    filter: int
    residual: float
    degenerate: bool
    note: str = ""


def reinit_filters(model, dropped, mask, scale, rng, opt_state=None,
                   next_layer=False) -> list:
    """Re-draw dropped filters orthogonal to live filters and their own
    pre-drop values, then reset the attached state.

    The constraint matrix per layer starts as the full pre-reinit filter
    bank (live rows at current values, dropped rows still frozen at
    pre-drop values) and grows: each accepted re-draw is appended, so
    filters reinitialized together are also orthogonal to each other.
    Draws are projected onto the current null space; once that space is
    exhausted the draw keeps only its component outside the constraint
    row space, and if even that vanishes the raw draw survives. Both
    non-null-space cases are degenerate and recorded, never fatal --
    without them a crowded layer (J close to k*k*c) would hand every
    re-draw the same leftover direction, which is worse than random.

    New filters are set to scale * the norm a fresh draw of this layer
    would have at model init, with zero bias and identity BN state; their
    optimizer slots reset, and with next_layer the consuming kernels (or
    FC columns after the last conv layer) are re-drawn at their own init
    std and their slots reset too. So apart from the direction being
    chosen instead of random, a re-drawn filter restarts under its birth
    conditions. Draw order is sorted by (layer, filter) so a fixed
    generator state fixes the outcome.

    The init anchor matters on both sides. A filter re-drawn much below
    init scale, feeding kernels much smaller than init, gets a vanishing
    gradient and never trains; it then keeps its pristine orthogonality,
    outranks the filters doing the work at the next cycle, and the scheme
    starts pruning its own backbone. Anchoring to the current live norms
    instead fails the other way: trained norms grow without bound, so
    each cycle injects ever larger random features and recovery stalls.
    """
    by_layer = {}
    for layer_idx, filter_idx in dropped:
        by_layer.setdefault(layer_idx, []).append(filter_idx)
    records = []
    depth = len(model.conv_layers)
    for layer_idx in sorted(by_layer):
        layer = model.conv_layers[layer_idx]
        constraints = filter_matrix(layer)  # live + pre-drop rows, growing
        dim = constraints.shape[1]
        # expected norm of an init-time draw: std sqrt(2/dim) over dim coords
        target = scale * np.sqrt(2.0 / dim) * np.sqrt(dim)
        for filter_idx in sorted(by_layer[layer_idx]):
            basis = null_space_basis(constraints)
            c_hat, _ = row_normalize(constraints)
            raw = rng.standard_normal(dim)
            degenerate = False
            note = ""
            if basis.shape[1] > 0:
                v = basis @ (basis.T @ raw)
                tries = 0
                while np.sqrt(v @ v) < 1e-12 and tries < 8:
                    raw = rng.standard_normal(dim)
                    v = basis @ (basis.T @ raw)
                    tries += 1
            else:
                degenerate = True
                v = rowspace_residual(constraints, raw)
                if np.sqrt(v @ v) <= 1e-12 * np.sqrt(raw @ raw):
                    v = raw
                    note = "constraints span the whole space"
                else:
                    note = "empty null space, residual direction used"
            norm_v = np.sqrt(v @ v)
            if norm_v == 0.0:
                raise RepruneError(
                    f"reinit produced a zero filter at ({layer_idx},{filter_idx})")
            v = v * (target / norm_v)
            residual = float(np.abs(c_hat @ (v / target)).max())
            if not degenerate and residual > 1e-8:
                degenerate = True
                note = "projection residual above bound"
            constraints = np.vstack([constraints, v[None, :]])
            set_filter_row(layer, filter_idx, v)
            layer.bias[filter_idx] = 0.0
            if layer.bn is not None:
                layer.bn.gamma[filter_idx] = 1.0
                layer.bn.beta[filter_idx] = 0.0
                layer.bn.running_mean[filter_idx] = 0.0
                layer.bn.running_var[filter_idx] = 1.0
            if next_layer:
                if layer_idx + 1 < depth:
                    nxt = model.conv_layers[layer_idx + 1]
                    std = np.sqrt(2.0 / nxt.weights[0].size)
                    nxt.weights[:, filter_idx] = rng.normal(
                        0.0, std, size=nxt.weights[:, filter_idx].shape)
                else:
                    hw = model.input_shape[1] * model.input_shape[2]
                    cols = slice(filter_idx * hw, (filter_idx + 1) * hw)
                    model.fc_w[:, cols] = rng.normal(
                        0.0, 0.01, size=model.fc_w[:, cols].shape)
            records.append(ReinitRecord(layer_idx, filter_idx, residual,
                                        degenerate, note))
    if opt_state is not None:
        reset_slots(opt_state, sorted(dropped), model,
                    include_next_layer=next_layer)
    return records


def run_repr(model, opt_state, schedule: ReprSchedule, data, lr_schedule,
             epochs, batch_size, seed, streams, probe=None, augment=False,
             cycle=None, log=None, stats=None, epoch_hook=None):
    """Execute the full cyclic schedule for `epochs` epochs.

    `streams` carries the named random generators (dropout / reinit /
    metric); batch order is keyed by (seed, epoch) and needs no state.
    Pass a restored (cycle, log, stats) triple to resume: epochs before
    cycle.epoch are skipped and the run continues bit-exactly.

    Returns (model, log); cycle is mutated in place and carries the event
    history. epoch_hook() runs after each completed epoch, after
    cycle.epoch has advanced, which is the safe point to checkpoint.
    """
    schedule.validate()
    lr_schedule.validate()
    if cycle is None:
        cycle = CycleState(mask=PruneMask.full(model))
    if log is None:
        log = MetricsLog()
    if stats is None:
        stats = GradActStats(model)
    params = model.parameters()
    mask = cycle.mask
    train_x, train_y = data.split_arrays("train")
    test_x, test_y = data.split_arrays("test")
    lam = schedule.ortho_loss_lambda
    n_batches = (train_x.shape[0] + batch_size - 1) // batch_size

    for phase, iteration, start, stop in phase_timeline(schedule, epochs):
        for epoch in range(start, stop):
            if epoch < cycle.epoch:
                continue
            if epoch == start:
                _enter_span(model, opt_state, schedule, cycle, phase,
                            iteration, epoch, probe, stats, streams)
            stats.reset()
            correct = 0
            loss_sum = 0.0
            seen = 0
            for b_idx, (bx, by) in enumerate(make_batches(
                    train_x, train_y, batch_size, seed, epoch, augment)):
                if cycle.pending_chunks:
                    for layer_idx, filter_idx in cycle.pending_chunks.pop(0):
                        mask.rows[layer_idx][filter_idx] = False
                logits, cache = forward(model, mask, bx, mode="train",
                                        dropout_rng=streams.dropout)
                loss, grads = backward(model, mask, cache, by)
                if lam > 0:
                    penalty, pgrads = ortho_loss_grads(model, mask)
                    loss += lam * penalty
                    for name, g in pgrads.items():
                        grads[name] += lam * g
                if not np.isfinite(loss):
                    raise RepruneError(
                        f"training diverged: non-finite loss at epoch "
                        f"{epoch}, batch {b_idx}")
                stats.update(model, cache, grads)
                lr = lr_at(lr_schedule, epoch + b_idx / n_batches)
                optim_step(opt_state, params, grads, mask, lr)
                correct += int((logits.argmax(axis=1) == by).sum())
                loss_sum += loss * bx.shape[0]
                seen += bx.shape[0]
            _, test_acc = evaluate(model, mask, test_x, test_y)
            log.append(epoch=epoch, phase=phase, iteration=iteration,
                       train_acc=correct / seen, test_acc=test_acc,
                       train_loss=loss_sum / seen,
                       ortho_sum=ortho_sum(model, mask),
                       live_filters=mask.live_count(),
                       lr=lr_at(lr_schedule, epoch))
            cycle.epoch = epoch + 1
            cycle.epoch_in_phase = epoch + 1 - start
            if epoch_hook is not None:
                epoch_hook()
    return model, log


def _enter_span(model, opt_state, schedule, cycle, phase, iteration, epoch,
                probe, stats, streams):
    cycle.phase = phase
    cycle.iteration = iteration
    cycle.epoch_in_phase = 0
    cycle.log_event(epoch, f"phase {phase} start iteration={iteration}")
    if phase == "sub":
        scores = metric_scores(model, cycle.mask, schedule.metric,
                               probe=probe, recorded=stats,
                               rng=streams.metric)
        cycle.log_event(epoch, f"rank metric={schedule.metric}")
        selection = select_bottom(scores, schedule.p_percent)
        cycle.dropped = selection
        cycle.pending_chunks = staged_prune(selection,
                                            schedule.staged_prune_batches)
        cycle.log_event(
            epoch, f"prune count={len(selection)} "
                   f"chunks={len(cycle.pending_chunks)}")
    elif iteration > 0:
        # entering the full span that follows a sub span
        while cycle.pending_chunks:
            for layer_idx, filter_idx in cycle.pending_chunks.pop(0):
                cycle.mask.rows[layer_idx][filter_idx] = False
        records = reinit_filters(
            model, cycle.dropped, cycle.mask, schedule.reinit_scale,
            streams.reinit, opt_state=opt_state,
            next_layer=schedule.reinit_next_layer_kernels)
        for layer_idx, filter_idx in cycle.dropped:
            cycle.mask.rows[layer_idx][filter_idx] = True
        bad = [r for r in records if r.degenerate]
        cycle.log_event(epoch,
                        f"reinit count={len(records)} degenerate={len(bad)}")
        for r in bad:
            cycle.log_event(epoch,
                            f"reinit-degenerate layer={r.layer} "
                            f"filter={r.filter} note={r.note}")
        cycle.dropped = []
