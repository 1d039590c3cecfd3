"""Stroke operator, coarse/detail projectors and the roughness schedule.

Images are float64 arrays of shape ``(C, H, W)``; a leading batch axis is
accepted everywhere, the operator only ever touches the last two axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Test hook: when set, upsampling repeats block means with a one-pixel shift.
# Used by ``verify`` mutation checks; never set in normal operation.
_FAULT_UPSAMPLE_SHIFT = False


def _set_fault(enabled: bool) -> None:
    global _FAULT_UPSAMPLE_SHIFT
    _FAULT_UPSAMPLE_SHIFT = bool(enabled)


def _check_k(x: np.ndarray, k: int) -> None:
    if int(k) != k or k < 1:
        raise ValueError(f"block size k must be a positive integer, got {k!r}")
    if x.ndim < 2:
        raise ValueError(f"expected an image with at least 2 axes, got shape {x.shape}")
    h, w = x.shape[-2:]
    if h % k:
        raise ValueError(f"height {h} is not divisible by block size k={k}")
    if w % k:
        raise ValueError(f"width {w} is not divisible by block size k={k}")


def block_means(x: np.ndarray, k: int) -> np.ndarray:
    """Average-pool the last two axes with kernel and stride ``k``."""
    x = np.asarray(x, dtype=np.float64)
    _check_k(x, k)
    h, w = x.shape[-2:]
    blocks = x.reshape(*x.shape[:-2], h // k, k, w // k, k)
    return blocks.mean(axis=(-3, -1))


def upsample(coarse: np.ndarray, k: int) -> np.ndarray:
    """Nearest-neighbour upsampling of the last two axes by ``k``."""
    out = np.repeat(np.repeat(coarse, k, axis=-2), k, axis=-1)
    if _FAULT_UPSAMPLE_SHIFT:
        out = np.roll(out, 1, axis=-1)
    return out


def apply_stroke(x: np.ndarray, k: int) -> np.ndarray:
    """S_k: replace every k-by-k block of every channel by its mean."""
    if k == 1:
        x = np.asarray(x, dtype=np.float64)
        _check_k(x, k)
        return x.copy()
    return upsample(block_means(x, k), k)


coarse_project = apply_stroke


def detail_project(x: np.ndarray, k: int) -> np.ndarray:
    """Q_d x = x - S_k x, the within-block variation."""
    x = np.asarray(x, dtype=np.float64)
    return x - apply_stroke(x, k)


def _check_w(w: float) -> None:
    if not 0.0 <= w < 1.0:
        raise ValueError(f"mixing weight must lie in [0, 1), got {w}")


def mix(x: np.ndarray, w: float, k: int) -> np.ndarray:
    """Stroke map (1 - w) x + w S_k x."""
    _check_w(w)
    x = np.asarray(x, dtype=np.float64)
    if w == 0.0:
        _check_k(x, k)
        return x.copy()
    return (1.0 - w) * x + w * apply_stroke(x, k)


def mix_inverse(x: np.ndarray, w: float, k: int) -> np.ndarray:
    """Inverse stroke map Q_c x + Q_d x / (1 - w)."""
    _check_w(w)
    coarse = apply_stroke(x, k)
    return coarse + (np.asarray(x, dtype=np.float64) - coarse) / (1.0 - w)


def mix_batch(x: np.ndarray, weights: np.ndarray, k: int) -> np.ndarray:
    """Apply a per-sample stroke map to a batch ``(B, C, H, W)``."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (x.shape[0],):
        raise ValueError(f"need one weight per sample, got {weights.shape} for batch {x.shape[0]}")
    if np.any(weights < 0.0) or np.any(weights >= 1.0):
        raise ValueError("mixing weights must lie in [0, 1)")
    x = np.asarray(x, dtype=np.float64)
    out = x.copy()
    active = weights > 0.0
    if np.any(active):
        wa = weights[active].reshape(-1, *([1] * (x.ndim - 1)))
        xa = x[active]
        out[active] = (1.0 - wa) * xa + wa * apply_stroke(xa, k)
    else:
        _check_k(x, k)
    return out


@dataclass(frozen=True)
class StrokeOperator:
    k: int

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"block size k must be a positive integer, got {self.k!r}")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return apply_stroke(x, self.k)

    def coarse(self, x):
        return apply_stroke(x, self.k)

    def detail(self, x):
        return detail_project(x, self.k)

    def mix(self, x, w):
        return mix(x, w, self.k)

    def dims(self, channels: int, height: int, width: int) -> tuple[int, int]:
        """Return ``(d_coarse, d_detail)`` for an image of the given shape."""
        _check_k(np.empty((height, width)), self.k)
        d_coarse = channels * (height // self.k) * (width // self.k)
        return d_coarse, channels * height * width - d_coarse


@dataclass(frozen=True)
class RoughnessSchedule:
    """Stroke weights w_0..w_T: zero up to the cut index, then linear to ``w_max``."""

    T: int
    f_rough: float = 0.75
    w_max: float = 0.5
    k: int = 2
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if not 0.0 <= self.f_rough <= 1.0:
            raise ValueError(f"f_rough must lie in [0, 1], got {self.f_rough}")
        if not 0.0 <= self.w_max < 1.0:
            raise ValueError(f"w_max must lie in [0, 1), got {self.w_max}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"block size k must be a positive integer, got {self.k!r}")
        t = np.arange(self.T + 1, dtype=np.float64)
        t0 = self.t0
        w = np.zeros(self.T + 1)
        if t0 < self.T:
            rough = t > t0
            w[rough] = self.w_max * (t[rough] - t0) / (self.T - t0)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def t0(self) -> int:
        # exact floor for rational inputs like 0.75 * 500
        return int(np.floor((1.0 - self.f_rough) * self.T + 1e-9))

    @property
    def op(self) -> StrokeOperator:
        return StrokeOperator(self.k)

    def weight(self, t: int) -> float:
        return roughness_weight(t, self)


def roughness_weight(t: int, sched: RoughnessSchedule) -> float:
    if not 0 <= t <= sched.T:
        raise ValueError(f"timestep {t} outside [0, {sched.T}]")
    return float(sched.weights[t])


def attenuation_gamma(omega: float, k: int) -> float:
    """|sin(k w / 2) / (k sin(w / 2))|, the 1D block-average amplitude response."""
    if k < 1:
        raise ValueError(f"block size k must be >= 1, got {k}")
    half = np.sin(omega / 2.0)
    if abs(half) < 1e-9:
        return 1.0
    return float(min(1.0, abs(np.sin(k * omega / 2.0) / (k * half))))


def mode_energy_ratio(rho: float, w: float) -> float:
    """Energy kept by the stroke map on a mode whose coarse retention is ``rho``."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"retention ratio must lie in [0, 1], got {rho}")
    _check_w(w)
    return rho**2 + (1.0 - w) ** 2 * (1.0 - rho**2)


def multires_complexity(x: np.ndarray, k: int, s: float) -> float:
    """One-scale Haar roughness ||Q_c x||^2 + k^(2s) ||Q_d x||^2."""
    if s < 0:
        raise ValueError(f"smoothness exponent must be >= 0, got {s}")
    coarse = apply_stroke(x, k)
    detail = np.asarray(x, dtype=np.float64) - coarse
    return float(np.sum(coarse**2) + k ** (2 * s) * np.sum(detail**2))


def aligned_mode(height: int, width: int, m1: int, m2: int) -> tuple[np.ndarray, np.ndarray]:
    """Real and imaginary parts of exp(i(w1 n1 + w2 n2)) with w_i = 2 pi m_i / N_i."""
    n1 = np.arange(height)[:, None]
    n2 = np.arange(width)[None, :]
    phase = 2 * np.pi * m1 * n1 / height + 2 * np.pi * m2 * n2 / width
    return np.cos(phase)[None], np.sin(phase)[None]
