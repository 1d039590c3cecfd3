"""Ancestral DDPM sampling and the stroke-controlled sampler, contiguous or jumped."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diffusion import NoiseSchedule, VarianceConvention, jump_mean_variance
from .stroke import RoughnessSchedule, mix

EpsModel = Callable[[np.ndarray, int, int], np.ndarray]


def subsample_schedule(T: int, N: int) -> list[int]:
    """N + 1 strictly decreasing timesteps from T to 0, tau_i = round(T (N - i) / N)."""
    if not 1 <= N <= T:
        raise ValueError(f"number of steps must lie in [1, {T}], got {N}")
    # integer round-half-up of T * (N - i) / N
    taus = [(2 * T * (N - i) + N) // (2 * N) for i in range(N + 1)]
    taus[0], taus[-1] = T, 0
    out = [taus[0]]
    for tau in taus[1:]:
        if tau < out[-1]:
            out.append(tau)
    return out


@dataclass(frozen=True)
class SamplePlan:
    timesteps: tuple[int, ...]
    variance: VarianceConvention = VarianceConvention.FIXEDLARGE
    mode: str = "ddpm"
    seed: int = 0

    def __post_init__(self):
        ts = tuple(int(t) for t in self.timesteps)
        if len(ts) < 2 or ts[-1] != 0:
            raise ValueError("plan must contain at least one step and end at 0")
        if any(a <= b for a, b in zip(ts, ts[1:])):
            raise ValueError(f"plan timesteps must be strictly decreasing: {ts}")
        if self.mode not in ("ddpm", "multistroke"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        object.__setattr__(self, "timesteps", ts)
        object.__setattr__(self, "variance", VarianceConvention(self.variance))

    @classmethod
    def uniform(cls, T: int, N: int, **kw) -> "SamplePlan":
        return cls(tuple(subsample_schedule(T, N)), **kw)

    def steps(self):
        return zip(self.timesteps, self.timesteps[1:])


def _check(plan: SamplePlan, sched: NoiseSchedule, mode: str):
    if plan.mode != mode:
        raise ValueError(f"plan mode is {plan.mode!r}, expected {mode!r}")
    if plan.timesteps[0] > sched.T:
        raise ValueError(f"plan starts at {plan.timesteps[0]} but schedule has T={sched.T}")


def _predict(model: EpsModel, x, t, label):
    eps_hat = np.asarray(model(x, t, label), dtype=np.float64)
    if eps_hat.shape != x.shape:
        raise ValueError(f"model output shape {eps_hat.shape} != state shape {x.shape}")
    return eps_hat


def sample_ddpm(model: EpsModel, sched: NoiseSchedule, plan: SamplePlan, label: int,
                shape: tuple[int, ...], rng: np.random.Generator | None = None,
                trace: list | None = None) -> np.ndarray:
    """Ancestral sampling along ``plan``; the final step into state 0 is noiseless."""
    _check(plan, sched, "ddpm")
    rng = np.random.default_rng(plan.seed) if rng is None else rng
    x = rng.standard_normal(shape)
    for t, s in plan.steps():
        eps_hat = _predict(model, x, t, label)
        mean, var = jump_mean_variance(x, eps_hat, t, s, sched, plan.variance)
        noise = rng.standard_normal(shape) if s > 0 else np.zeros(shape)
        x = mean + np.sqrt(var) * noise
        if trace is not None:
            trace.append((t, s, x.copy()))
    return x


def sample_multistroke(model: EpsModel, sched: NoiseSchedule, rough: RoughnessSchedule, plan: SamplePlan,
                       label: int, shape: tuple[int, ...], rng: np.random.Generator | None = None,
                       trace: list | None = None) -> np.ndarray:
    """Stroke-controlled sampling.

    The state is mixed with the current weight w_t before prediction and the
    injected noise with the destination weight w_s.
    """
    _check(plan, sched, "multistroke")
    if rough.T != sched.T:
        raise ValueError(f"roughness schedule has T={rough.T}, noise schedule T={sched.T}")
    rng = np.random.default_rng(plan.seed) if rng is None else rng
    k = rough.k
    t_start = plan.timesteps[0]
    x = mix(rng.standard_normal(shape), rough.weight(t_start), k)
    for t, s in plan.steps():
        x_ms = mix(x, rough.weight(t), k)
        eps_hat = _predict(model, x_ms, t, label)
        mean, var = jump_mean_variance(x_ms, eps_hat, t, s, sched, plan.variance)
        if s > 0:
            noise = mix(rng.standard_normal(shape), rough.weight(s), k)
        else:
            noise = np.zeros(shape)
        x = mean + np.sqrt(var) * noise
        if trace is not None:
            trace.append((t, s, x.copy()))
    return x


def sample(model: EpsModel, sched: NoiseSchedule, plan: SamplePlan, label: int, shape,
           rough: RoughnessSchedule | None = None, rng=None) -> np.ndarray:
    if plan.mode == "multistroke":
        if rough is None:
            raise ValueError("multistroke sampling needs a roughness schedule")
        return sample_multistroke(model, sched, rough, plan, label, shape, rng)
    return sample_ddpm(model, sched, plan, label, shape, rng)
