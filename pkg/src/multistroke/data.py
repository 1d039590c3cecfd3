"""Procedural class-conditional toy images in [-1, 1].

Class 1 draws filled squares, class 2 disks, class 3 horizontal stripes and
class 4 vertical stripes.  Each class sits in its own quadrant-biased position
range so the class mean images differ.  Label 0 is reserved for the null class.
"""

from __future__ import annotations

import numpy as np

NUM_CLASSES = 4


def _square(rng, size):
    img = np.full((size, size), -1.0)
    side = rng.integers(size // 4 + 1, size // 2 + 2)
    r0 = rng.integers(0, size // 2 - side // 2 + 1)
    c0 = rng.integers(0, size // 2 - side // 2 + 1)
    img[r0:r0 + side, c0:c0 + side] = 1.0
    return img


def _disk(rng, size):
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    radius = rng.uniform(size / 6, size / 3)
    cy = rng.uniform(size / 2, size - radius / 2)
    cx = rng.uniform(size / 2, size - radius / 2)
    return np.where((yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2, 1.0, -1.0)


def _stripes(rng, size, axis):
    period = int(rng.integers(2, 5))
    phase = int(rng.integers(0, period))
    n = np.arange(size)
    line = np.where(((n + phase) // max(period // 2, 1)) % 2 == 0, 1.0, -1.0)
    img = np.tile(line[:, None], (1, size)) if axis == 0 else np.tile(line[None, :], (size, 1))
    # confine stripes to one half so the class mean is not flat
    if axis == 0:
        img[:, : size // 2] = -1.0
    else:
        img[: size // 2, :] = -1.0
    return img


def make_image(label: int, size: int, rng: np.random.Generator, channels: int = 1) -> np.ndarray:
    if label == 1:
        img = _square(rng, size)
    elif label == 2:
        img = _disk(rng, size)
    elif label == 3:
        img = _stripes(rng, size, axis=0)
    elif label == 4:
        img = _stripes(rng, size, axis=1)
    else:
        raise ValueError(f"label must be in 1..{NUM_CLASSES}, got {label}")
    return np.repeat(img[None], channels, axis=0)


def make_dataset(n: int, size: int = 8, channels: int = 1, seed: int = 0):
    """Return ``(images, labels)`` with classes cycling 1..4."""
    if n < 1:
        raise ValueError("dataset must be nonempty")
    rng = np.random.default_rng(seed)
    labels = (np.arange(n) % NUM_CLASSES) + 1
    images = np.stack([make_image(int(y), size, rng, channels) for y in labels])
    return images, labels


def class_means(images: np.ndarray, labels: np.ndarray) -> dict[int, np.ndarray]:
    return {int(c): images[labels == c].mean(axis=0) for c in np.unique(labels)}
