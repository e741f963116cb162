"""Dataset ingestion (IDX and CIFAR-10 binary), splits, seeded batching.

Both formats load into float64 images in [0,1] (pixel byte / 255) shaped
[N, c, h, w]. Writers exist for fixtures and synthetic sets; a written
file read back and re-serialized reproduces its bytes exactly.

Batch order is a pure function of (seed, epoch): every epoch owns one
generator, consumed in a fixed order, so runs and resumed runs see the
same stream without carrying RNG state around.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073  # label byte + 3 * 32 * 32 pixels


@dataclass
class Dataset:
    images: np.ndarray           # [N, c, h, w] float64 in [0, 1]
    labels: np.ndarray           # [N] int64
    splits: dict = field(default_factory=dict)
    num_classes: int = 10

    @property
    def size(self) -> int:
        return self.images.shape[0]

    def validate(self):
        n = self.size
        if self.labels.shape != (n,):
            raise ConfigurationError(
                f"{n} images but {self.labels.shape[0]} labels")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConfigurationError(
                f"label outside [0, {self.num_classes})")
        seen = np.zeros(n, dtype=bool)
        for name, idx in self.splits.items():
            if len(idx) and (idx.min() < 0 or idx.max() >= n):
                raise ConfigurationError(f"split {name!r} indexes out of range")
            if seen[idx].any():
                raise ConfigurationError(f"split {name!r} overlaps another split")
            seen[idx] = True

    def split_arrays(self, name):
        if name not in self.splits:
            raise ConfigurationError(f"dataset has no split {name!r}")
        idx = self.splits[name]
        return self.images[idx], self.labels[idx]


def _read_be_u32(data: bytes, offset: int, path) -> int:
    if offset + 4 > len(data):
        raise FormatError(
            f"{path}: truncated header, needed 4 bytes at offset {offset}, "
            f"file has {len(data)}")
    return struct.unpack(">I", data[offset:offset + 4])[0]


def load_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image/label file pair into a single-split dataset."""
    with open(images_path, "rb") as fh:
        blob = fh.read()
    magic = _read_be_u32(blob, 0, images_path)
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(
            f"{images_path}: bad magic 0x{magic:08x} at offset 0, expected "
            f"0x{IDX_IMAGES_MAGIC:08x}")
    n = _read_be_u32(blob, 4, images_path)
    h = _read_be_u32(blob, 8, images_path)
    w = _read_be_u32(blob, 12, images_path)
    expected = 16 + n * h * w
    if len(blob) != expected:
        raise FormatError(
            f"{images_path}: expected {expected} bytes ({n}x{h}x{w} pixels "
            f"from offset 16), found {len(blob)}")
    pixels = np.frombuffer(blob, dtype=np.uint8, offset=16)
    images = pixels.astype(np.float64).reshape(n, 1, h, w) / 255.0

    with open(labels_path, "rb") as fh:
        blob = fh.read()
    magic = _read_be_u32(blob, 0, labels_path)
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(
            f"{labels_path}: bad magic 0x{magic:08x} at offset 0, expected "
            f"0x{IDX_LABELS_MAGIC:08x}")
    n_labels = _read_be_u32(blob, 4, labels_path)
    if len(blob) != 8 + n_labels:
        raise FormatError(
            f"{labels_path}: expected {8 + n_labels} bytes, found {len(blob)}")
    if n_labels != n:
        raise FormatError(
            f"{labels_path}: {n_labels} labels for {n} images in "
            f"{images_path}")
    labels = np.frombuffer(blob, dtype=np.uint8, offset=8).astype(np.int64)
    return Dataset(images, labels, {"all": np.arange(n)})


def write_idx_images(path, images) -> None:
    """Serialize [N,h,w] or [N,1,h,w] images (u8 or [0,1] floats) as IDX."""
    arr = np.asarray(images)
    if arr.ndim == 4:
        if arr.shape[1] != 1:
            raise ConfigurationError("IDX images are single-channel")
        arr = arr[:, 0]
    if arr.dtype != np.uint8:
        arr = np.rint(arr * 255.0).astype(np.uint8)
    n, h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        fh.write(arr.tobytes())


def write_idx_labels(path, labels) -> None:
    arr = np.asarray(labels).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, arr.shape[0]))
        fh.write(arr.tobytes())


def load_cifar10_binary(paths) -> Dataset:
    """Parse one or more CIFAR-10 batch files (3073-byte records)."""
    if isinstance(paths, (str, bytes)):
        paths = [paths]
    images_parts = []
    labels_parts = []
    for path in paths:
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) % CIFAR_RECORD:
            raise FormatError(
                f"{path}: size {len(blob)} is not a multiple of "
                f"{CIFAR_RECORD}-byte records")
        records = np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labels_parts.append(records[:, 0].astype(np.int64))
        images_parts.append(
            records[:, 1:].astype(np.float64).reshape(-1, 3, 32, 32) / 255.0)
    images = np.concatenate(images_parts)
    labels = np.concatenate(labels_parts)
    return Dataset(images, labels, {"all": np.arange(images.shape[0])})


def write_cifar10_binary(path, images, labels) -> None:
    arr = np.asarray(images)
    if arr.dtype != np.uint8:
        arr = np.rint(arr * 255.0).astype(np.uint8)
    if arr.ndim != 4 or arr.shape[1:] != (3, 32, 32):
        raise ConfigurationError(
            f"CIFAR-10 records are [N,3,32,32], got {arr.shape}")
    labels = np.asarray(labels).astype(np.uint8)
    records = np.empty((arr.shape[0], CIFAR_RECORD), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = arr.reshape(arr.shape[0], -1)
    with open(path, "wb") as fh:
        fh.write(records.tobytes())


def assemble(train_pool: Dataset, test_pool: Dataset, train_size=None,
             probe_size=0) -> Dataset:
    """Combine a train-pool and a test-pool into one split dataset.

    The probe split (held out for oracle and activation metrics) is carved
    from the train pool right after the training subset, so it never
    overlaps a training batch by construction.
    """
    n_train_pool = train_pool.size
    if train_size is None:
        train_size = n_train_pool - probe_size
    if train_size + probe_size > n_train_pool:
        raise ConfigurationError(
            f"train_size {train_size} + probe_size {probe_size} exceeds the "
            f"train pool of {n_train_pool}")
    images = np.concatenate([train_pool.images, test_pool.images])
    labels = np.concatenate([train_pool.labels, test_pool.labels])
    splits = {
        "train": np.arange(train_size),
        "probe": np.arange(train_size, train_size + probe_size),
        "test": np.arange(n_train_pool, n_train_pool + test_pool.size),
    }
    ds = Dataset(images, labels, splits,
                 num_classes=max(train_pool.num_classes,
                                 test_pool.num_classes))
    ds.validate()
    return ds


def make_batches(images, labels, batch_size, seed, epoch, augment=False):
    """Yield (batch_images, batch_labels) in a (seed, epoch)-keyed order.

    Shuffles every epoch, keeps the last partial batch, and optionally
    applies horizontal flip (p=0.5) plus 4-pixel pad-and-random-crop. All
    randomness comes from one generator seeded by (seed, epoch) and
    consumed in batch order, so the stream is reproducible and identical
    across resumes.
    """
    n = images.shape[0]
    if n == 0:
        raise ConfigurationError("cannot batch an empty split")
    if batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        bx = images[idx]
        by = labels[idx]
        if augment:
            bx = bx.copy()
            flip = rng.random(bx.shape[0]) < 0.5
            bx[flip] = bx[flip][..., ::-1]
            pad = 4
            h, w = bx.shape[2], bx.shape[3]
            padded = np.pad(bx, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
            offs = rng.integers(0, 2 * pad + 1, size=(bx.shape[0], 2))
            for i, (oy, ox) in enumerate(offs):
                bx[i] = padded[i, :, oy:oy + h, ox:ox + w]
        yield bx, by
