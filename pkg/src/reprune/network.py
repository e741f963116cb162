"""The vanilla convnet family C^n(X): n conv+ReLU blocks, an FC head, softmax.

Filter liveness is a multiply-by-{0,1} gate on output channels, never a
physical removal, so shapes stay stable while filters are dropped and
re-introduced. The gate is applied to the conv output and again after
batch norm, which gives the exact-equivalence guarantee tests rely on:
a masked filter behaves identically to one whose weights, bias, gamma and
beta are all zero.

Convolution is cross-correlation (no kernel flip), stride 1 and same
padding (k//2) inside the model; the standalone conv2d op accepts any
stride/padding. Filters flatten channel-major, then row, then column.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, DimensionError


def relu(x):
    return np.maximum(x, 0.0)


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5

    @classmethod
    def identity(cls, j: int) -> "BatchNormState":
        return cls(np.ones(j), np.zeros(j), np.zeros(j), np.ones(j))

    def clone(self) -> "BatchNormState":
        return BatchNormState(self.gamma.copy(), self.beta.copy(),
                              self.running_mean.copy(), self.running_var.copy(),
                              self.momentum, self.epsilon)


@dataclass
class ConvLayer:
    weights: np.ndarray  # [J, c, k, k]
    bias: np.ndarray     # [J]
    bn: BatchNormState | None = None

    @property
    def filters(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel(self) -> int:
        return self.weights.shape[2]

    def clone(self) -> "ConvLayer":
        bn = self.bn.clone() if self.bn is not None else None
        return ConvLayer(self.weights.copy(), self.bias.copy(), bn)


def filter_matrix(layer: ConvLayer) -> np.ndarray:
    """Layer weights as J rows of length k*k*c (channel-major, row, column)."""
    j = layer.filters
    return layer.weights.reshape(j, -1).copy()


def set_filter_row(layer: ConvLayer, index: int, row) -> None:
    """Write one flattened filter back; inverse of filter_matrix row read."""
    c, k = layer.in_channels, layer.kernel
    row = np.asarray(row, dtype=np.float64)
    if row.shape != (c * k * k,):
        raise DimensionError(
            f"filter row needs shape ({c * k * k},), got {row.shape}")
    layer.weights[index] = row.reshape(c, k, k)


class PruneMask:
    """Per-layer liveness bits, one per filter. True means live."""

    def __init__(self, rows):
        self.rows = [np.array(r, dtype=bool) for r in rows]

    @classmethod
    def full(cls, model: "Model") -> "PruneMask":
        return cls([np.ones(l.filters, dtype=bool) for l in model.conv_layers])

    def copy(self) -> "PruneMask":
        return PruneMask(self.rows)

    def live_count(self) -> int:
        return int(sum(r.sum() for r in self.rows))

    def all_live(self) -> bool:
        return all(r.all() for r in self.rows)

    def gate(self, layer_index: int) -> np.ndarray:
        return self.rows[layer_index].astype(np.float64)

    def check_shape(self, model: "Model") -> None:
        if len(self.rows) != len(model.conv_layers):
            raise ConfigurationError(
                f"mask has {len(self.rows)} rows for a "
                f"{len(model.conv_layers)}-layer model")
        for i, (row, layer) in enumerate(zip(self.rows, model.conv_layers)):
            if row.shape != (layer.filters,):
                raise ConfigurationError(
                    f"mask row {i} has {row.shape[0]} bits, layer has "
                    f"{layer.filters} filters")

    def check_no_empty_layer(self) -> None:
        for i, row in enumerate(self.rows):
            if not row.any():
                raise ConfigurationError(
                    f"mask empties layer {i}; every layer needs a live filter")


@dataclass
class Model:
    conv_layers: list
    fc_w: np.ndarray          # [num_classes, flat_dim]
    fc_b: np.ndarray          # [num_classes]
    input_shape: tuple        # (c, h, w)
    dropout: float = 0.0      # probability on the FC input, train mode only

    @property
    def num_classes(self) -> int:
        return self.fc_w.shape[0]

    def parameters(self) -> dict:
        """Live references to every trainable array, in a fixed order."""
        params = {}
        for i, layer in enumerate(self.conv_layers):
            params[f"conv{i}.w"] = layer.weights
            params[f"conv{i}.b"] = layer.bias
            if layer.bn is not None:
                params[f"conv{i}.gamma"] = layer.bn.gamma
                params[f"conv{i}.beta"] = layer.bn.beta
        params["fc.w"] = self.fc_w
        params["fc.b"] = self.fc_b
        return params

    def validate(self) -> None:
        c = self.input_shape[0]
        for i, layer in enumerate(self.conv_layers):
            if layer.in_channels != c:
                raise ConfigurationError(
                    f"layer {i} expects {layer.in_channels} input channels, "
                    f"gets {c}")
            c = layer.filters
        h, w = self.input_shape[1], self.input_shape[2]
        flat = c * h * w
        if self.fc_w.shape[1] != flat:
            raise ConfigurationError(
                f"fc expects {self.fc_w.shape[1]} features, conv stack "
                f"produces {flat}")

    def clone(self) -> "Model":
        return Model([l.clone() for l in self.conv_layers],
                     self.fc_w.copy(), self.fc_b.copy(),
                     self.input_shape, self.dropout)


def init_model(depth, width, input_shape, num_classes=10, kernel=3,
               batch_norm=False, dropout=0.0, rng=None) -> Model:
    """Build C^depth(width) with scaled-normal conv init, std-0.01 FC init.

    Conv std is sqrt(2 / (k*k*c_in)). Draw order is conv0..convN-1 then fc,
    so two models built from generators in the same state are identical.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    c, h, w = input_shape
    layers = []
    c_in = c
    for _ in range(depth):
        std = np.sqrt(2.0 / (kernel * kernel * c_in))
        weights = rng.normal(0.0, std, size=(width, c_in, kernel, kernel))
        bn = BatchNormState.identity(width) if batch_norm else None
        layers.append(ConvLayer(weights, np.zeros(width), bn))
        c_in = width
    fc_w = rng.normal(0.0, 0.01, size=(num_classes, width * h * w))
    model = Model(layers, fc_w, np.zeros(num_classes), tuple(input_shape),
                  dropout)
    model.validate()
    return model


def _im2col(x, kernel, stride, padding):
    """Patch matrix [B*ho*wo, c*k*k] plus output geometry."""
    b, c, h, w = x.shape
    if h + 2 * padding < kernel or w + 2 * padding < kernel:
        raise DimensionError(
            f"input {h}x{w} with padding {padding} is smaller than a "
            f"{kernel}x{kernel} kernel")
    if (h + 2 * padding - kernel) % stride or (w + 2 * padding - kernel) % stride:
        raise DimensionError(
            f"kernel {kernel} stride {stride} padding {padding} does not "
            f"tile a {h}x{w} input evenly")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kernel * kernel)
    return np.ascontiguousarray(cols), ho, wo, xp.shape


def conv2d(x, layer: ConvLayer, stride=1, padding=0) -> np.ndarray:
    """Cross-correlate a batch [B,c,h,w] with a layer's filters."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be [B,c,h,w], got {x.shape}")
    if x.shape[1] != layer.in_channels:
        raise DimensionError(
            f"input has {x.shape[1]} channels, layer expects "
            f"{layer.in_channels}")
    b = x.shape[0]
    j, k = layer.filters, layer.kernel
    cols, ho, wo, _ = _im2col(x, k, stride, padding)
    out = cols @ layer.weights.reshape(j, -1).T + layer.bias
    return out.reshape(b, ho, wo, j).transpose(0, 3, 1, 2)


@dataclass
class ActivationCache:
    """Everything backward and the activation metrics need from a forward.

    grad_post_act stays None until backward fills it; it holds the loss
    gradient w.r.t. each layer's post-ReLU map, which the Taylor metric
    consumes.
    """
    mode: str
    batch: np.ndarray
    cols: list = field(default_factory=list)        # im2col per layer (train)
    pre_act: list = field(default_factory=list)     # gated, post-BN, pre-ReLU
    post_act: list = field(default_factory=list)
    bn_x_hat: list = field(default_factory=list)
    bn_std: list = field(default_factory=list)
    pad_shapes: list = field(default_factory=list)
    gates: list = field(default_factory=list)
    flat: np.ndarray | None = None                  # FC input after dropout
    dropout_scale: np.ndarray | None = None
    logits: np.ndarray | None = None
    grad_post_act: list | None = None


def forward(model: Model, mask: PruneMask, batch, mode="train",
            dropout_rng=None):
    """Run the network; returns (logits, cache).

    Train mode uses batch statistics for BN (updating running stats for
    live channels only) and applies dropout; eval mode uses running stats
    and skips dropout. Persistent training masks must keep every layer
    alive; eval-only masks may empty a layer, which transient oracle
    probes need.
    """
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"unknown forward mode {mode!r}")
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[1:] != tuple(model.input_shape):
        raise DimensionError(
            f"batch shape {batch.shape} does not match input spec "
            f"{(-1,) + tuple(model.input_shape)}")
    mask.check_shape(model)
    if mode == "train":
        mask.check_no_empty_layer()

    cache = ActivationCache(mode=mode, batch=batch)
    x = batch
    train = mode == "train"
    for i, layer in enumerate(model.conv_layers):
        k = layer.kernel
        gate = mask.gate(i)
        cols, ho, wo, pad_shape = _im2col(x, k, stride=1, padding=k // 2)
        z = cols @ layer.weights.reshape(layer.filters, -1).T + layer.bias
        z = z.reshape(x.shape[0], ho, wo, layer.filters).transpose(0, 3, 1, 2)
        z = z * gate[None, :, None, None]
        if layer.bn is not None:
            bn = layer.bn
            if train:
                mean = z.mean(axis=(0, 2, 3))
                var = z.var(axis=(0, 2, 3))
                live = mask.rows[i]
                np.copyto(bn.running_mean,
                          (1 - bn.momentum) * bn.running_mean + bn.momentum * mean,
                          where=live)
                np.copyto(bn.running_var,
                          (1 - bn.momentum) * bn.running_var + bn.momentum * var,
                          where=live)
            else:
                mean, var = bn.running_mean, bn.running_var
            std = np.sqrt(var + bn.epsilon)
            x_hat = (z - mean[None, :, None, None]) / std[None, :, None, None]
            z = bn.gamma[None, :, None, None] * x_hat + bn.beta[None, :, None, None]
            z = z * gate[None, :, None, None]
            cache.bn_x_hat.append(x_hat)
            cache.bn_std.append(std)
        else:
            cache.bn_x_hat.append(None)
            cache.bn_std.append(None)
        a = relu(z)
        cache.cols.append(cols if train else None)
        cache.pre_act.append(z)
        cache.post_act.append(a)
        cache.pad_shapes.append(pad_shape)
        cache.gates.append(gate)
        x = a

    flat = x.reshape(x.shape[0], -1)
    if train and model.dropout > 0.0:
        if dropout_rng is None:
            raise ConfigurationError(
                "dropout is active but no dropout generator was passed")
        keep = dropout_rng.random(flat.shape) >= model.dropout
        cache.dropout_scale = keep / (1.0 - model.dropout)
        flat = flat * cache.dropout_scale
    cache.flat = flat
    logits = flat @ model.fc_w.T + model.fc_b
    cache.logits = logits
    return logits, cache


def _softmax_xent(logits, labels):
    """Stable mean cross-entropy and its logit gradient (already / B)."""
    b = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(total)
    loss = -log_probs[np.arange(b), labels].mean()
    dlogits = exp / total
    dlogits[np.arange(b), labels] -= 1.0
    return loss, dlogits / b


def backward(model: Model, mask: PruneMask, cache: ActivationCache, labels):
    """Mean softmax cross-entropy and gradients for every parameter.

    Gradients of masked filters come out exactly zero: the gate kills them
    analytically and they are zeroed again explicitly so no rounding dust
    survives. Fills cache.grad_post_act as a side effect.
    """
    if cache.mode != "train" or cache.cols[0] is None:
        raise ConfigurationError("backward needs a cache from a train-mode forward")
    labels = np.asarray(labels)
    if labels.shape != (cache.batch.shape[0],):
        raise ConfigurationError(
            f"labels shape {labels.shape} does not match batch of "
            f"{cache.batch.shape[0]}")

    loss, dlogits = _softmax_xent(cache.logits, labels)
    grads = {}
    grads["fc.w"] = dlogits.T @ cache.flat
    grads["fc.b"] = dlogits.sum(axis=0)
    dflat = dlogits @ model.fc_w
    if cache.dropout_scale is not None:
        dflat = dflat * cache.dropout_scale

    last = model.conv_layers[-1]
    h = model.input_shape[1]
    w = model.input_shape[2]
    da = dflat.reshape(-1, last.filters, h, w)
    cache.grad_post_act = [None] * len(model.conv_layers)

    for i in range(len(model.conv_layers) - 1, -1, -1):
        layer = model.conv_layers[i]
        gate = cache.gates[i][None, :, None, None]
        live = mask.rows[i]
        cache.grad_post_act[i] = da
        dz = da * (cache.pre_act[i] > 0)
        dz = dz * gate
        if layer.bn is not None:
            bn = layer.bn
            n = dz.shape[0] * dz.shape[2] * dz.shape[3]
            x_hat = cache.bn_x_hat[i]
            dgamma = (dz * x_hat).sum(axis=(0, 2, 3))
            dbeta = dz.sum(axis=(0, 2, 3))
            # batch-statistics backward; mean and var both depend on z
            coeff = bn.gamma / cache.bn_std[i]
            dz = coeff[None, :, None, None] * (
                dz - dbeta[None, :, None, None] / n
                - x_hat * dgamma[None, :, None, None] / n)
            dgamma[~live] = 0.0
            dbeta[~live] = 0.0
            grads[f"conv{i}.gamma"] = dgamma
            grads[f"conv{i}.beta"] = dbeta
            dz = dz * gate
        b, j = dz.shape[0], layer.filters
        ho, wo = dz.shape[2], dz.shape[3]
        dz2 = dz.transpose(0, 2, 3, 1).reshape(-1, j)
        dw = (dz2.T @ cache.cols[i]).reshape(layer.weights.shape)
        db = dz2.sum(axis=0)
        dw[~live] = 0.0
        db[~live] = 0.0
        grads[f"conv{i}.w"] = dw
        grads[f"conv{i}.b"] = db
        if i > 0:
            k = layer.kernel
            pad = k // 2
            dcols = dz2 @ layer.weights.reshape(j, -1)
            d6 = dcols.reshape(b, ho, wo, layer.in_channels, k, k)
            dxp = np.zeros(cache.pad_shapes[i])
            for ki in range(k):
                for kj in range(k):
                    dxp[:, :, ki:ki + ho, kj:kj + wo] += \
                        d6[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            prev_h = dxp.shape[2] - 2 * pad
            prev_w = dxp.shape[3] - 2 * pad
            da = dxp[:, :, pad:pad + prev_h, pad:pad + prev_w]
    return loss, grads


def materialize_mask(model: Model, mask: PruneMask) -> Model:
    """Clone with masked filters physically zeroed (w, b, gamma, beta).

    By the gating semantics this clone under a full mask computes exactly
    what the original computes under `mask`.
    """
    out = model.clone()
    for i, layer in enumerate(out.conv_layers):
        dead = ~mask.rows[i]
        layer.weights[dead] = 0.0
        layer.bias[dead] = 0.0
        if layer.bn is not None:
            layer.bn.gamma[dead] = 0.0
            layer.bn.beta[dead] = 0.0
    return out


def evaluate(model: Model, mask: PruneMask, images, labels, batch_size=500):
    """Eval-mode loss and accuracy over a fixed-order pass."""
    n = images.shape[0]
    if n == 0:
        raise ConfigurationError("cannot evaluate on an empty set")
    correct = 0
    loss_sum = 0.0
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        logits, _ = forward(model, mask, images[start:stop], mode="eval")
        part = labels[start:stop]
        loss, _ = _softmax_xent(logits, part)
        loss_sum += loss * (stop - start)
        correct += int((logits.argmax(axis=1) == part).sum())
    return loss_sum / n, correct / n
