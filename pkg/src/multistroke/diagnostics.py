"""Spectral diagnostics and a training-free one-class calibrated score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .stroke import block_means

EPS_STAB = 1e-12
SNR_CAP_DB = 120.0
LOW_BAND_MAX = 0.3
HIGH_BAND_MIN = 0.6


def grayscale(x: np.ndarray) -> np.ndarray:
    """Unweighted channel mean of ``(C, H, W)``, or of ``(N, C, H, W)`` per image."""
    return np.asarray(x, dtype=np.float64).mean(axis=-3)


def dft2(x: np.ndarray) -> np.ndarray:
    """Centred 2D DFT of the last two axes (zero frequency at index (H//2, W//2))."""
    return np.fft.fftshift(np.fft.fft2(np.asarray(x, dtype=np.float64)), axes=(-2, -1))


def dft2_logmag(x: np.ndarray) -> np.ndarray:
    return np.log1p(np.abs(dft2(x)))


def radial_norm(height: int, width: int) -> np.ndarray:
    """Radius of every centred frequency bin divided by the largest radius on the grid."""
    ky = np.arange(height) - height // 2
    kx = np.arange(width) - width // 2
    r = np.hypot(ky[:, None], kx[None, :])
    return r / r.max() if r.max() > 0 else r


@dataclass(frozen=True)
class BandMask:
    kind: str
    mask: np.ndarray

    @classmethod
    def make(cls, kind: str, height: int, width: int) -> "BandMask":
        r = radial_norm(height, width)
        if kind == "low":
            return cls(kind, r <= LOW_BAND_MAX)
        if kind == "high":
            return cls(kind, r >= HIGH_BAND_MIN)
        raise ValueError(f"band kind must be 'low' or 'high', got {kind!r}")


def band_snr(generated, reference_mean, band: BandMask) -> float:
    """Mean over images of 10 log10(band power of the mean / band power of the deviation), in dB.

    Values are clipped to +-120 dB so a zero deviation or zero signal stays finite.
    """
    ref = np.asarray(reference_mean, dtype=np.float64)
    gen = np.asarray(generated, dtype=np.float64)
    if gen.ndim == ref.ndim:
        gen = gen[None]
    if len(gen) == 0:
        raise ValueError("need at least one generated image")
    if gen.shape[1:] != ref.shape:
        raise ValueError(f"generated images {gen.shape[1:]} do not match reference {ref.shape}")
    if ref.ndim == 3:
        ref = grayscale(ref)
        gen = grayscale(gen)
    if band.mask.shape != ref.shape:
        raise ValueError(f"band mask {band.mask.shape} does not match image {ref.shape}")
    signal = np.sum(np.abs(dft2(ref))[band.mask] ** 2)
    noise = np.sum(np.abs(dft2(gen - ref))[..., band.mask] ** 2, axis=-1)
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(signal / (noise + EPS_STAB))
    return float(np.mean(np.clip(db, -SNR_CAP_DB, SNR_CAP_DB)))


def pooled_features(x: np.ndarray, k: int = 2) -> np.ndarray:
    """Fixed feature map: k-by-k block means, flattened per image."""
    x = np.asarray(x, dtype=np.float64)
    pooled = block_means(x, k)
    return pooled.reshape(len(x), -1) if x.ndim == 4 else pooled.ravel()


@dataclass
class ClassCalibration:
    centers: dict[int, np.ndarray]
    tables: dict[int, np.ndarray]

    @classmethod
    def fit(cls, train_images, train_labels, calib_images, calib_labels, features=pooled_features):
        """Centres from the training split, sorted squared distances from the calibration split."""
        ft = features(np.asarray(train_images))
        fc = features(np.asarray(calib_images))
        train_labels = np.asarray(train_labels)
        calib_labels = np.asarray(calib_labels)
        centers, tables = {}, {}
        for c in np.unique(train_labels):
            c = int(c)
            centers[c] = ft[train_labels == c].mean(axis=0)
            sel = calib_labels == c
            if not np.any(sel):
                raise ValueError(f"class {c} has no calibration images")
            tables[c] = np.sort(np.sum((fc[sel] - centers[c]) ** 2, axis=1))
        return cls(centers, tables)


def squared_distance(x, label: int, calib: ClassCalibration, features=pooled_features) -> float:
    if label not in calib.centers:
        raise KeyError(f"unknown class label {label}")
    f = features(np.asarray(x)[None]).ravel()
    return float(np.sum((f - calib.centers[label]) ** 2))


def score_from_distance(d2: float, label: int, calib: ClassCalibration) -> float:
    """1 - F(d2) with F the empirical CDF of the class's calibration distances.

    Tied calibration distances count one half (mid-rank), so held-out draws
    from the calibration distribution average 0.5 even when distances repeat.
    """
    table = calib.tables[label]
    below = np.searchsorted(table, d2, side="left")
    at_or_below = np.searchsorted(table, d2, side="right")
    return 1.0 - 0.5 * (below + at_or_below) / len(table)


def one_class_score(x, label: int, calib: ClassCalibration, features=pooled_features) -> float:
    return score_from_distance(squared_distance(x, label, calib, features), label, calib)


def mean_one_class_score(images, labels, calib: ClassCalibration, features=pooled_features) -> float:
    """Mean calibrated score on the 0..100 scale."""
    scores = [one_class_score(x, int(y), calib, features) for x, y in zip(images, labels)]
    return 100.0 * float(np.mean(scores))
