"""Noise schedule, forward process, reverse-step quantities and losses."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .stroke import RoughnessSchedule, mix, mix_batch


class VarianceConvention(str, Enum):
    FIXEDLARGE = "fixedlarge"
    FIXEDSMALL = "fixedsmall"


@dataclass(frozen=True)
class NoiseSchedule:
    """beta_1..beta_T with derived tables; index 0 of every table is the t=0 convention."""

    betas: np.ndarray
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64).ravel()
        if b.size < 1:
            raise ValueError("schedule needs at least one step")
        if np.any(b <= 0.0) or np.any(b >= 1.0):
            raise ValueError("every beta_t must lie in (0, 1)")
        betas = np.concatenate([[0.0], b])
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        for arr in (betas, alphas, alpha_bars):
            arr.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @property
    def T(self) -> int:
        return self.betas.size - 1

    def check_t(self, t: int, allow_zero: bool = False) -> None:
        lo = 0 if allow_zero else 1
        if not lo <= t <= self.T:
            raise ValueError(f"timestep {t} outside [{lo}, {self.T}]")


def linear_beta_schedule(T: int, beta_1: float = 1e-4, beta_T: float = 2.8e-2) -> NoiseSchedule:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_1 <= beta_T < 1.0:
        raise ValueError(f"need 0 < beta_1 <= beta_T < 1, got {beta_1}, {beta_T}")
    if T == 1:
        return NoiseSchedule(np.array([beta_1]))
    return NoiseSchedule(np.linspace(beta_1, beta_T, T))


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def forward_sample(x0, t: int, eps, sched: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    _same_shape(x0, eps)
    sched.check_t(t)
    ab = sched.alpha_bars[t]
    return np.sqrt(ab) * np.asarray(x0, dtype=np.float64) + np.sqrt(1.0 - ab) * np.asarray(eps, dtype=np.float64)


def forward_sample_batch(x0: np.ndarray, t: np.ndarray, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    _same_shape(x0, eps)
    t = np.asarray(t)
    if t.min() < 1 or t.max() > sched.T:
        raise ValueError(f"timesteps must lie in [1, {sched.T}]")
    ab = sched.alpha_bars[t].reshape(-1, *([1] * (x0.ndim - 1)))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def snr(t: int, sched: NoiseSchedule) -> float:
    sched.check_t(t)
    ab = sched.alpha_bars[t]
    return float(ab / (1.0 - ab))


def score_from_eps(eps_hat, t: int, sched: NoiseSchedule) -> np.ndarray:
    sched.check_t(t)
    return -np.asarray(eps_hat, dtype=np.float64) / np.sqrt(1.0 - sched.alpha_bars[t])


def eps_from_score(score, t: int, sched: NoiseSchedule) -> np.ndarray:
    sched.check_t(t)
    return -np.asarray(score, dtype=np.float64) * np.sqrt(1.0 - sched.alpha_bars[t])


def jump_alpha(t: int, s: int, sched: NoiseSchedule) -> float:
    """Effective one-step coefficient abar_t / abar_s for a jump t -> s."""
    sched.check_t(t)
    sched.check_t(s, allow_zero=True)
    if s >= t:
        raise ValueError(f"jump must go backwards in time, got t={t}, s={s}")
    return float(sched.alpha_bars[t] / sched.alpha_bars[s])


def jump_mean_variance(x, eps_hat, t: int, s: int, sched: NoiseSchedule,
                       conv: VarianceConvention | str = VarianceConvention.FIXEDLARGE):
    _same_shape(x, eps_hat)
    a = jump_alpha(t, s, sched)
    ab_t = sched.alpha_bars[t]
    mean = (np.asarray(x, dtype=np.float64) - (1.0 - a) / np.sqrt(1.0 - ab_t) * np.asarray(eps_hat, dtype=np.float64)) / np.sqrt(a)
    var = 1.0 - a
    if VarianceConvention(conv) is VarianceConvention.FIXEDSMALL:
        var = (1.0 - sched.alpha_bars[s]) / (1.0 - ab_t) * var
    return mean, float(var)


def reverse_mean(x, eps_hat, t: int, sched: NoiseSchedule) -> np.ndarray:
    _same_shape(x, eps_hat)
    sched.check_t(t)
    a = sched.alphas[t]
    return (np.asarray(x, dtype=np.float64) - (1.0 - a) / np.sqrt(1.0 - sched.alpha_bars[t]) * np.asarray(eps_hat, dtype=np.float64)) / np.sqrt(a)


def reverse_variance(t: int, sched: NoiseSchedule,
                     conv: VarianceConvention | str = VarianceConvention.FIXEDLARGE) -> float:
    sched.check_t(t)
    var = 1.0 - sched.alphas[t]
    if VarianceConvention(conv) is VarianceConvention.FIXEDSMALL:
        var = (1.0 - sched.alpha_bars[t - 1]) / (1.0 - sched.alpha_bars[t]) * var
    return float(var)


def ddpm_loss(eps_pred, eps) -> float:
    """Summed squared error ||eps_pred - eps||^2."""
    _same_shape(eps_pred, eps)
    r = np.asarray(eps_pred, dtype=np.float64) - np.asarray(eps, dtype=np.float64)
    return float(np.sum(r * r))


def ms_loss(eps_pred, eps, w: float, k: int) -> float:
    """Stroke-space error ||A(eps_pred - eps)||^2 with A = (1 - w) I + w S_k."""
    _same_shape(eps_pred, eps)
    r = mix(np.asarray(eps_pred, dtype=np.float64) - np.asarray(eps, dtype=np.float64), w, k)
    return float(np.sum(r * r))


def _target_weight(t: int, rough: RoughnessSchedule, aligned: bool) -> float:
    if aligned:
        return rough.weight(max(t - 1, 0))
    return rough.weight(t)


def ms_input(x_t, t: int, rough: RoughnessSchedule) -> np.ndarray:
    """Stroke-mixed network input A_t(x_t)."""
    return mix(x_t, rough.weight(t), rough.k)


def ms_target(eps, t: int, rough: RoughnessSchedule, aligned: bool = False) -> np.ndarray:
    """Stroke-space target A_t(eps).

    ``aligned=True`` uses the weight of the next reverse-chain state, w_{t-1},
    as in timestep-aligned fine-tuning.
    """
    return mix(eps, _target_weight(t, rough, aligned), rough.k)


def ms_input_batch(x_t: np.ndarray, t: np.ndarray, rough: RoughnessSchedule) -> np.ndarray:
    return mix_batch(x_t, rough.weights[np.asarray(t)], rough.k)
