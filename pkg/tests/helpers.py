"""Independent oracles shared by the test suites.

Everything here is deliberately naive: nested loops, central finite
differences, O(n^2) ranking. The point is to have implementations wrong
in different ways than the package could be.
"""

import numpy as np

from reprune.data import make_batches
from reprune.network import PruneMask, backward, evaluate, forward, \
    init_model
from reprune.optim import lr_at, step
from reprune.scheduler import ortho_sum


def loop_matmul(a, b):
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def loop_conv2d(x, w, b, stride=1, padding=0):
    """Direct convolution, one multiply at a time."""
    n, c, h, wd = x.shape
    j, c2, kh, kw = w.shape
    assert c == c2
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding),
                       (padding, padding)))
        h, wd = h + 2 * padding, wd + 2 * padding
    ho = (h - kh) // stride + 1
    wo = (wd - kw) // stride + 1
    out = np.zeros((n, j, ho, wo))
    for im in range(n):
        for f in range(j):
            for oy in range(ho):
                for ox in range(wo):
                    s = 0.0
                    for ch in range(c):
                        for ky in range(kh):
                            for kx in range(kw):
                                s += (x[im, ch, oy * stride + ky,
                                        ox * stride + kx]
                                      * w[f, ch, ky, kx])
                    out[im, f, oy, ox] = s + b[f]
    return out


def brute_ortho_rows(bank):
    """Mean pairwise |cosine| per filter, straight from the definition.

    A zero filter keeps a diagonal entry of 1 (its row of the penalty
    matrix is computed with the zero vector), so its score is 1/J.
    """
    j = bank.shape[0]
    norms = np.sqrt((bank ** 2).sum(axis=1))
    scores = np.zeros(j)
    for a in range(j):
        if norms[a] == 0:
            scores[a] = 1.0 / j
            continue
        total = 0.0
        for b in range(j):
            if a == b or norms[b] == 0:
                continue
            total += abs(float(bank[a] @ bank[b]) / (norms[a] * norms[b]))
        scores[a] = total / j
    return scores


def fd_gradients(model, mask, batch, labels, eps=1e-5):
    """Central-difference gradient of the training loss for every param."""
    grads = {}
    params = model.parameters()
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            lo_plus = _loss_only(model, mask, batch, labels)
            flat[i] = keep - eps
            lo_minus = _loss_only(model, mask, batch, labels)
            flat[i] = keep
            gflat[i] = (lo_plus - lo_minus) / (2 * eps)
        grads[name] = g
    return grads


def _loss_only(model, mask, batch, labels):
    logits, _ = forward(model, mask, batch, mode="train")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return -logp[np.arange(len(labels)), labels].mean()


def relative_error(approx, exact):
    denom = max(np.abs(exact).max(), np.abs(approx).max(), 1e-8)
    return np.abs(approx - exact).max() / denom


def brute_average_ranks(x):
    """1-based average ranks, O(n^2) from the definition."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(len(x))
    for i, v in enumerate(x):
        less = int((x < v).sum())
        equal = int((x == v).sum())
        # ranks occupied by the tie group: less+1 .. less+equal
        out[i] = less + (equal + 1) / 2.0
    return out


def brute_pearson(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    yc = y - y.mean()
    return float((xc * yc).sum()
                 / np.sqrt((xc ** 2).sum() * (yc ** 2).sum()))


def brute_spearman(x, y):
    return brute_pearson(brute_average_ranks(x), brute_average_ranks(y))


def small_model(depth=2, width=3, size=6, channels=1, classes=4,
                batch_norm=False, dropout=0.0, seed=0):
    rng = np.random.default_rng(seed)
    return init_model(depth, width, (channels, size, size),
                      num_classes=classes, kernel=3, batch_norm=batch_norm,
                      dropout=dropout, rng=rng)


def random_batch(model, n=4, seed=1):
    rng = np.random.default_rng(seed)
    c, h, w = model.input_shape
    x = rng.uniform(0.0, 1.0, size=(n, c, h, w))
    y = rng.integers(0, model.fc_w.shape[0], size=n)
    return x, y


def plain_training_loop(model, opt_state, dataset, lr_schedule, epochs,
                        batch_size, seed, dropout_rng, ortho_lambda=0.0):
    """Standard training with no scheduler involvement at all.

    Reproduces the exact arithmetic a no-cycle run must perform: one
    seeded batch stream per epoch, forward/backward/step, then the same
    epoch-end measurements in the same order.
    """
    from reprune.scheduler import MetricsLog, ortho_loss_grads

    mask = PruneMask.full(model)
    log = MetricsLog()
    train_x, train_y = dataset.split_arrays("train")
    test_x, test_y = dataset.split_arrays("test")
    n_batches = (len(train_x) + batch_size - 1) // batch_size
    for epoch in range(epochs):
        correct = 0
        seen = 0
        loss_sum = 0.0
        for b_idx, (bx, by) in enumerate(make_batches(
                train_x, train_y, batch_size, seed, epoch)):
            logits, cache = forward(model, mask, bx, mode="train",
                                    dropout_rng=dropout_rng)
            loss, grads = backward(model, mask, cache, by)
            if ortho_lambda > 0:
                penalty, pgrads = ortho_loss_grads(model, mask)
                loss += ortho_lambda * penalty
                for name, g in pgrads.items():
                    grads[name] += ortho_lambda * g
            correct += int((logits.argmax(axis=1) == by).sum())
            seen += len(by)
            loss_sum += loss * len(by)
            lr = lr_at(lr_schedule, epoch + b_idx / n_batches)
            step(opt_state, model.parameters(), grads, mask, lr)
        test_loss, test_acc = evaluate(model, mask, test_x, test_y)
        log.append(epoch=epoch, phase="full", iteration=0,
                   train_acc=correct / seen, test_acc=test_acc,
                   train_loss=loss_sum / seen,
                   ortho_sum=ortho_sum(model, mask),
                   live_filters=mask.live_count(),
                   lr=lr_at(lr_schedule, epoch))
    return log
