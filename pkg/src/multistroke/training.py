"""Training loop with timestep-bucketed loss tracking."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .denoiser import DenoiserModel, batch_loss_and_gradients
from .diffusion import NoiseSchedule, linear_beta_schedule
from .optim import AdamWState, optimizer_step
from .stroke import RoughnessSchedule

log = logging.getLogger(__name__)

MODES = ("ddpm", "multistroke")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    clip_norm: float = 1.0
    batch_size: int = 32
    steps: int = 2000
    label_drop: float = 0.1
    seed: int = 0
    T: int = 500
    beta_1: float = 1e-4
    beta_T: float = 2.8e-2
    k: int = 2
    f_rough: float = 0.75
    w_max: float = 0.5
    buckets: int = 5
    aligned_target: bool = False

    def __post_init__(self):
        for name in ("lr", "clip_norm", "batch_size", "T", "k", "buckets"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.weight_decay < 0 or self.steps < 0:
            raise ValueError("weight_decay and steps must be nonnegative")
        if not 0.0 <= self.label_drop <= 1.0:
            raise ValueError(f"label_drop must lie in [0, 1], got {self.label_drop}")

    def noise_schedule(self) -> NoiseSchedule:
        return linear_beta_schedule(self.T, self.beta_1, self.beta_T)

    def roughness(self) -> RoughnessSchedule:
        return RoughnessSchedule(self.T, self.f_rough, self.w_max, self.k)


class LossBuckets:
    """Per-sample losses binned into equal contiguous timestep ranges of 1..T."""

    def __init__(self, T: int, n_buckets: int = 5):
        if not 1 <= n_buckets <= T:
            raise ValueError(f"need 1 <= buckets <= T, got {n_buckets} for T={T}")
        self.T = T
        self.n_buckets = n_buckets
        self._steps: list[np.ndarray] = []
        self._buckets: list[np.ndarray] = []
        self._losses: list[np.ndarray] = []

    def bucket_of(self, t):
        return (np.asarray(t) - 1) * self.n_buckets // self.T

    def bounds(self) -> list[tuple[int, int]]:
        """Inclusive ``(first, last)`` timestep of every bucket."""
        out = []
        for b in range(self.n_buckets):
            first = -(-b * self.T // self.n_buckets) + 1
            last = -(-(b + 1) * self.T // self.n_buckets)
            out.append((first, last))
        return out

    def add(self, step: int, t: np.ndarray, losses: np.ndarray) -> np.ndarray:
        """Record one step; returns the per-bucket mean for this step (NaN if empty)."""
        b = self.bucket_of(t)
        self._steps.append(np.full(len(t), step))
        self._buckets.append(b)
        self._losses.append(np.asarray(losses, dtype=np.float64))
        return _bucket_means(b, losses, self.n_buckets)

    def means(self, since_step: int = 0) -> np.ndarray:
        if not self._steps:
            return np.full(self.n_buckets, np.nan)
        steps = np.concatenate(self._steps)
        keep = steps >= since_step
        return _bucket_means(np.concatenate(self._buckets)[keep], np.concatenate(self._losses)[keep],
                             self.n_buckets)


def _bucket_means(buckets, losses, n):
    sums = np.bincount(buckets, weights=losses, minlength=n)
    counts = np.bincount(buckets, minlength=n)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


@dataclass
class TrainResult:
    """``buckets`` holds the raw training loss; ``plain_buckets`` the unmixed residual energy."""

    model: DenoiserModel
    buckets: LossBuckets
    plain_buckets: LossBuckets
    losses: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    clipped_grad_norms: list[float] = field(default_factory=list)
    bucket_rows: list[np.ndarray] = field(default_factory=list)

    def metrics_rows(self):
        """Rows for the metrics CSV: step, loss, grad_norm, bucket_0..bucket_{B-1}."""
        for i, (loss, gn, row) in enumerate(zip(self.losses, self.grad_norms, self.bucket_rows), start=1):
            yield [i, loss, gn, *row]


def train(model: DenoiserModel, images: np.ndarray, labels: np.ndarray, config: TrainConfig,
          mode: str = "multistroke") -> TrainResult:
    """Train a copy of ``model``; deterministic for a fixed ``config.seed``.

    Both modes draw identical minibatches, timesteps, noise and label drops
    for the same seed, so runs are paired sample by sample.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    images = np.asarray(images, dtype=np.float64)
    if len(images) == 0:
        raise ValueError("dataset is empty")
    h, w = images.shape[-2:]
    if h % config.k or w % config.k:
        raise ValueError(f"image size {h}x{w} is not divisible by stroke block size k={config.k}")
    labels = np.asarray(labels, dtype=np.int64)
    model = model.copy()
    sched = config.noise_schedule()
    rough = config.roughness() if mode == "multistroke" else None
    state = AdamWState()
    rng = np.random.default_rng(config.seed)
    buckets = LossBuckets(config.T, config.buckets)
    result = TrainResult(model, buckets, LossBuckets(config.T, config.buckets))
    n = len(images)
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, n, size=config.batch_size)
        t = rng.integers(1, config.T + 1, size=config.batch_size)
        eps = rng.standard_normal(images[idx].shape)
        drop = rng.random(config.batch_size) < config.label_drop
        y = np.where(drop, 0, labels[idx])
        loss, grads, per_sample, plain = batch_loss_and_gradients(
            model, sched, images[idx], t, eps, y, rough, config.aligned_target, with_plain=True)
        norm = optimizer_step(model.params, grads, state, config.lr, config.weight_decay, config.clip_norm)
        result.losses.append(loss)
        result.grad_norms.append(norm)
        result.clipped_grad_norms.append(min(norm, config.clip_norm))
        result.bucket_rows.append(buckets.add(step, t, per_sample))
        result.plain_buckets.add(step, t, plain)
        if step % 500 == 0:
            log.info("%s step %d loss %.4f grad_norm %.3f", mode, step, loss, norm)
    return result
