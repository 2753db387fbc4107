"""Shared denoising-diffusion math: schedules, forward noising, reverse step.

Both the video model and the action head use the same primitives, each with
its own schedule instance. Everything regresses the clean signal directly,
so the reverse step consumes a clean-signal estimate rather than a noise
estimate.

Conventions: steps are 1-based, ``t = 1 .. num_steps``; the cumulative
noise-retention coefficient at ``t = 0`` is defined as exactly 1 so the
final reverse step is an identity on the model's clean estimate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["NoiseSchedule", "make_noise_schedule", "q_sample", "p_sample"]


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step retention ``alpha[t]`` and cumulative product ``alpha_bar[t]``.

    Arrays are indexed ``t-1`` for steps ``1..num_steps`` and stored in
    float64 so the cumulative-product invariant holds to 1e-12.
    """

    num_steps: int
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def abar(self, t) -> np.ndarray:
        """Cumulative retention at step ``t`` (scalar or array), abar(0) = 1."""
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.num_steps):
            raise ValueError(f"step index {t} outside [0, {self.num_steps}]")
        table = np.concatenate([[1.0], self.alpha_bar])
        return table[t]


def make_noise_schedule(num_steps: int, kind: str = "linear",
                        beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    """Build a noise schedule.

    ``linear`` interpolates the per-step noise rate from ``beta_min`` to
    ``beta_max``; ``cosine`` follows the squared-cosine cumulative profile
    with per-step retention clipped to (0.001, 0.9999).
    """
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})")

    if kind == "linear":
        beta = np.linspace(beta_min, beta_max, num_steps, dtype=np.float64)
        alpha = 1.0 - beta
    elif kind == "cosine":
        s = 0.008
        grid = np.arange(num_steps + 1, dtype=np.float64) / num_steps
        f = np.cos((grid + s) / (1.0 + s) * np.pi / 2.0) ** 2
        abar = f / f[0]
        alpha = np.clip(abar[1:] / abar[:-1], 0.001, 0.9999)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")

    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(num_steps=num_steps, alpha=alpha, alpha_bar=alpha_bar)


def _coeff_shape(c: np.ndarray, target_ndim: int) -> np.ndarray:
    """Reshape per-sample coefficients ``[B]`` for broadcasting over ``[B, ...]``."""
    c = np.asarray(c)
    if c.ndim == 0:
        return c
    return c.reshape(c.shape + (1,) * (target_ndim - 1))


def q_sample(x0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Forward noising: mix the clean signal with unit noise at step ``t``."""
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    ab = _coeff_shape(sched.abar(t), x0.ndim)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def p_sample(x_t: np.ndarray, t, x0_pred: np.ndarray, sched: NoiseSchedule,
             noise: np.ndarray | None = None) -> np.ndarray:
    """One reverse step ``t -> t-1`` given the model's clean-signal estimate.

    The new sample is re-noised to level ``t-1``: mean scales the estimate by
    the square root of the cumulative retention, variance is the residual
    noise power. ``noise=None`` takes the deterministic (zero-noise) path.
    """
    if x0_pred.shape != x_t.shape:
        raise ValueError(f"x0_pred shape {x0_pred.shape} != x_t shape {x_t.shape}")
    t = np.asarray(t)
    if np.any(t < 1):
        raise ValueError("p_sample needs t >= 1")
    ab_prev = _coeff_shape(sched.abar(t - 1), x_t.ndim)
    out = np.sqrt(ab_prev) * x0_pred
    if noise is not None:
        if noise.shape != x_t.shape:
            raise ValueError(f"noise shape {noise.shape} != x_t shape {x_t.shape}")
        out = out + np.sqrt(1.0 - ab_prev) * noise
    return out
