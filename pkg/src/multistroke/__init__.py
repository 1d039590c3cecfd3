"""Stroke-controlled diffusion: operators, a small denoiser, samplers and verification tools."""

from .diffusion import NoiseSchedule, VarianceConvention, linear_beta_schedule
from .denoiser import DenoiserModel
from .sampler import SamplePlan, sample_ddpm, sample_multistroke, subsample_schedule
from .stroke import RoughnessSchedule, StrokeOperator, apply_stroke, mix
from .training import TrainConfig, train

__all__ = [
    "DenoiserModel", "NoiseSchedule", "RoughnessSchedule", "SamplePlan", "StrokeOperator", "TrainConfig",
    "VarianceConvention", "apply_stroke", "linear_beta_schedule", "mix", "sample_ddpm", "sample_multistroke",
    "subsample_schedule", "train",
]

__version__ = "0.1.0"
