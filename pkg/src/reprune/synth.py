"""Seeded synthetic pattern benchmark.

Ten classes of small textures. Each class is a fixed mixture of
integer-frequency 2D cosines; a sample is that prototype circularly
shifted, gain-jittered, noised, and quantized to bytes. Integer
frequencies make circular shifts phase shifts, so the class stays
recognizable under translation while individual pixels carry little
signal: a network has to learn oriented local structure, which is what
the filter-level machinery here needs to have something to rank.

Images default to three channels sharing each class's frequencies but
with their own phases and amplitudes, like color planes of a texture.
That keeps first-layer filters in a k*k*3-dimensional space, roomy
enough that filter overlap reflects training rather than geometry.

Everything derives from one integer seed. train/test parts use disjoint
sample streams over the same prototypes.
"""

import numpy as np

from .data import Dataset, assemble
from .errors import ConfigurationError

_PART_KEYS = {"train": 1, "test": 2, "extra": 3}


def _prototypes(seed, size, classes, components, channels, rng_key=0):
    rng = np.random.default_rng(np.random.SeedSequence([seed, rng_key]))
    protos = np.zeros((classes, channels, size, size))
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    for c in range(classes):
        img = np.zeros((channels, size, size))
        for _ in range(components):
            while True:
                fy, fx = rng.integers(0, 4, size=2)
                if fy or fx:
                    break
            amp = rng.uniform(0.5, 1.0)
            wave = 2.0 * np.pi * (fy * yy + fx * xx) / size
            phases = rng.uniform(0.0, 2.0 * np.pi, size=channels)
            chroma = rng.uniform(0.6, 1.0, size=channels)
            for ch in range(channels):
                img[ch] += amp * chroma[ch] * np.cos(wave + phases[ch])
        img -= img.mean(axis=(1, 2), keepdims=True)
        std = img.std(axis=(1, 2), keepdims=True)
        protos[c] = img / np.where(std > 0, std, 1.0)
    return protos


def pattern_dataset(seed, part, n, size=8, classes=10, components=3,
                    channels=3, noise=0.8, shift=2, gain=(0.6, 1.4),
                    contrast=0.16):
    """Byte images [n, channels, size, size] and labels for one part.

    Labels cycle 0..classes-1 so every part is class-balanced. The sample
    stream is keyed by (seed, part), the prototypes by seed alone; noise
    is the noise-to-contrast ratio, the main difficulty dial.
    """
    if part not in _PART_KEYS:
        raise ConfigurationError(
            f"unknown part {part!r}; expected one of {sorted(_PART_KEYS)}")
    protos = _prototypes(seed, size, classes, components, channels)
    rng = np.random.default_rng(
        np.random.SeedSequence([seed, 1000 + _PART_KEYS[part]]))
    labels = (np.arange(n) % classes).astype(np.int64)
    base = protos[labels]
    dy = rng.integers(-shift, shift + 1, size=n)
    dx = rng.integers(-shift, shift + 1, size=n)
    idx = np.arange(size)
    rows = (idx[None, :] - dy[:, None]) % size
    cols = (idx[None, :] - dx[:, None]) % size
    rolled = base[np.arange(n)[:, None, None, None],
                  np.arange(channels)[None, :, None, None],
                  rows[:, None, :, None], cols[:, None, None, :]]
    gains = rng.uniform(gain[0], gain[1], size=n)
    pix = 0.5 + contrast * gains[:, None, None, None] * rolled
    pix += rng.normal(0.0, noise * contrast, size=pix.shape)
    images = np.rint(np.clip(pix, 0.0, 1.0) * 255.0).astype(np.uint8)
    return images, labels


def benchmark_dataset(seed, train=10000, probe=1000, test=2000,
                      **kw) -> Dataset:
    """In-memory split dataset: probe carved from the train pool's tail."""
    train_imgs, train_labels = pattern_dataset(seed, "train", train + probe,
                                               **kw)
    test_imgs, test_labels = pattern_dataset(seed, "test", test, **kw)
    train_pool = Dataset(train_imgs.astype(np.float64) / 255.0,
                         train_labels, {"all": np.arange(train + probe)})
    test_pool = Dataset(test_imgs.astype(np.float64) / 255.0,
                        test_labels, {"all": np.arange(test)})
    return assemble(train_pool, test_pool, train_size=train,
                    probe_size=probe)
