"""Small conditional noise predictor eps(x, t, y) with tape-based gradients.

Layout: flattened image ++ sinusoidal timestep embedding ++ class embedding,
two SiLU hidden layers, linear head reshaped back to the image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffusion import NoiseSchedule, forward_sample_batch
from .stroke import RoughnessSchedule, mix_batch
from .tape import Tape

PARAM_NAMES = ("class_embed", "dense1.W", "dense1.b", "dense2.W", "dense2.b", "head.W", "head.b")


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding ``(B, dim)`` of integer timesteps."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((t.size, 1))], axis=1)
    return emb


@dataclass
class DenoiserModel:
    image_shape: tuple[int, int, int]
    num_classes: int
    time_dim: int
    class_dim: int
    hidden: int
    params: dict[str, np.ndarray]

    @classmethod
    def create(cls, image_shape=(1, 8, 8), num_classes: int = 4, hidden: int = 256,
               time_dim: int = 32, class_dim: int = 16, seed: int = 0,
               zero_head: bool = True) -> "DenoiserModel":
        rng = np.random.default_rng(seed)
        image_shape = tuple(int(s) for s in image_shape)
        d = int(np.prod(image_shape))
        d_in = d + time_dim + class_dim

        def lecun_uniform(fan_in, fan_out):
            limit = math.sqrt(3.0 / fan_in)
            return rng.uniform(-limit, limit, size=(fan_in, fan_out))

        params = {
            "class_embed": rng.standard_normal((num_classes + 1, class_dim)),
            "dense1.W": lecun_uniform(d_in, hidden),
            "dense1.b": np.zeros(hidden),
            "dense2.W": lecun_uniform(hidden, hidden),
            "dense2.b": np.zeros(hidden),
            "head.W": np.zeros((hidden, d)) if zero_head else lecun_uniform(hidden, d),
            "head.b": np.zeros(d),
        }
        return cls(image_shape, num_classes, time_dim, class_dim, hidden, params)

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "DenoiserModel":
        return DenoiserModel(self.image_shape, self.num_classes, self.time_dim, self.class_dim,
                             self.hidden, {k: v.copy() for k, v in self.params.items()})

    def __call__(self, x, t, label):
        """Predict noise for a single image ``(C, H, W)`` or a batch."""
        return forward(self, x, t, label)


def _prepare(model: DenoiserModel, x, t, labels):
    x = np.asarray(x, dtype=np.float64)
    single = x.shape == model.image_shape
    if single:
        x = x[None]
    if x.shape[1:] != model.image_shape:
        raise ValueError(f"input shape {x.shape[1:]} does not match model image shape {model.image_shape}")
    b = x.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (b,))
    labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), (b,))
    if labels.min() < 0 or labels.max() > model.num_classes:
        raise ValueError(f"labels must lie in 0..{model.num_classes} (0 is the null class)")
    if t.min() < 0:
        raise ValueError("timesteps must be nonnegative")
    return x, t, labels, single


def _build(model: DenoiserModel, tape: Tape, x, t, labels):
    p = {name: tape.param(model.params[name]) for name in PARAM_NAMES}
    flat = tape.constant(x.reshape(x.shape[0], -1))
    temb = tape.constant(timestep_embedding(t, model.time_dim))
    cemb = tape.gather(p["class_embed"], labels)
    h = tape.concat([flat, temb, cemb])
    h = tape.silu(tape.affine(h, p["dense1.W"], p["dense1.b"]))
    h = tape.silu(tape.affine(h, p["dense2.W"], p["dense2.b"]))
    out = tape.affine(h, p["head.W"], p["head.b"])
    return out, p


def forward(model: DenoiserModel, x, t, labels) -> np.ndarray:
    x, t, labels, single = _prepare(model, x, t, labels)
    out, _ = _build(model, Tape(), x, t, labels)
    pred = out.value.reshape(x.shape)
    return pred[0] if single else pred


def batch_loss_and_gradients(model: DenoiserModel, sched: NoiseSchedule, x0, t, eps, labels,
                             rough: RoughnessSchedule | None = None, aligned: bool = False,
                             with_plain: bool = False):
    """Mean batch loss, per-parameter gradients and per-sample losses.

    With ``with_plain`` a fourth value is returned: the per-sample unmixed
    residual energy ||pred - eps||^2, i.e. the stroke-space loss with the
    detail shrink undone.

    ``rough=None`` trains on the plain noise-regression loss; otherwise inputs
    are stroke-mixed with w_t and the residual is measured through the same
    stroke map (w_{t-1} for the residual when ``aligned``).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {eps.shape}")
    t = np.asarray(t, dtype=np.int64)
    x_t = forward_sample_batch(x0, t, eps, sched)
    if rough is not None:
        if rough.T != sched.T:
            raise ValueError(f"roughness schedule has T={rough.T}, noise schedule T={sched.T}")
        w_in = rough.weights[t]
        w_out = rough.weights[np.maximum(t - 1, 0)] if aligned else w_in
        x_in = mix_batch(x_t, w_in, rough.k)
    else:
        x_in = x_t
    x_in, t, labels, _ = _prepare(model, x_in, t, labels)
    tape = Tape()
    out, p = _build(model, tape, x_in, t, labels)
    b = x0.shape[0]
    resid = out.value.reshape(x0.shape) - eps
    if rough is not None:
        mixed = mix_batch(resid, w_out, rough.k)
        # A is self-adjoint, so d||A r||^2 / dr = 2 A(A r)
        seed = 2.0 * mix_batch(mixed, w_out, rough.k)
    else:
        mixed = resid
        seed = 2.0 * resid
    per_sample = np.sum(mixed.reshape(b, -1) ** 2, axis=1)
    tape.backward(out, seed.reshape(b, -1) / b)
    grads = {name: p[name].grad if p[name].grad is not None else np.zeros_like(model.params[name])
             for name in PARAM_NAMES}
    if with_plain:
        plain = np.sum(resid.reshape(b, -1) ** 2, axis=1)
        return float(per_sample.mean()), grads, per_sample, plain
    return float(per_sample.mean()), grads, per_sample


def loss_and_gradients(model, sched, x0, t, eps, labels, rough=None, aligned=False):
    loss, grads, _ = batch_loss_and_gradients(model, sched, x0, t, eps, labels, rough, aligned)
    return loss, grads
