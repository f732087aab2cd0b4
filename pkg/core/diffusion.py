"""
Cosine-schedule diffusion over gap embeddings with v-prediction, Min-SNR
weighting, classifier-free guidance and deterministic DDIM sampling.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

import sys

sys.path.insert(0, str(Path(__file__).parent.parent))
from config import COSINE_SCHEDULE_S, DIFFUSION_TIMESTEPS, MIN_SNR_GAMMA
from errors import ConfigurationError, DimensionError, ScheduleIndexError
from numcore import Tensor

logger = logging.getLogger(__name__)

SNR_CLAMP = (1e-8, 1e8)
BETA_MAX = 0.999

IntOrArray = Union[int, np.ndarray]


@dataclass
class DiffusionSchedule:
    """Cumulative alpha_bar over t = 0..T plus per-step alphas and betas."""

    timesteps: int
    s: float
    alpha_bar: np.ndarray  # (T + 1,)
    alphas: np.ndarray  # (T + 1,), alphas[0] = 1
    betas: np.ndarray

    def check(self, t: IntOrArray) -> np.ndarray:
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.timesteps):
            raise ScheduleIndexError(f"timestep outside [0, {self.timesteps}]: {t}")
        return t.astype(int)

    def snr(self, t: IntOrArray) -> np.ndarray:
        ab = self.alpha_bar[self.check(t)]
        with np.errstate(divide="ignore"):
            return np.clip(ab / (1.0 - ab), *SNR_CLAMP)


def cosine_schedule(timesteps: int = DIFFUSION_TIMESTEPS, s: float = COSINE_SCHEDULE_S) -> DiffusionSchedule:
    """alpha_bar(t) = f(t) / f(0) with f(t) = cos^2(((t/T) + s) / (1 + s) * pi/2)."""
    if timesteps < 1:
        raise ConfigurationError(f"timesteps must be positive, got {timesteps}")
    steps = np.arange(timesteps + 1, dtype=np.float64)
    f = np.cos((steps / timesteps + s) / (1.0 + s) * np.pi / 2) ** 2
    alpha_bar = f / f[0]
    alphas = np.ones_like(alpha_bar)
    alphas[1:] = alpha_bar[1:] / alpha_bar[:-1]
    betas = np.clip(1.0 - alphas, 0.0, BETA_MAX)
    return DiffusionSchedule(timesteps, s, alpha_bar, alphas, betas)


def _coef(schedule: DiffusionSchedule, t: IntOrArray, like: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """sqrt(alpha_bar_t) and sqrt(1 - alpha_bar_t) shaped to broadcast against ``like``."""
    t = schedule.check(t)
    ab = schedule.alpha_bar[t]
    if np.ndim(ab):
        ab = ab.reshape(ab.shape + (1,) * (np.ndim(like) - ab.ndim))
    return np.sqrt(ab), np.sqrt(1.0 - ab)


def ddpm_forward(z0: np.ndarray, t: IntOrArray, eps: np.ndarray, schedule: DiffusionSchedule) -> np.ndarray:
    """z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps."""
    a, b = _coef(schedule, t, z0)
    return a * z0 + b * eps


def v_target(z0: np.ndarray, eps: np.ndarray, t: IntOrArray, schedule: DiffusionSchedule) -> np.ndarray:
    """v = sqrt(ab_t) eps - sqrt(1 - ab_t) z0."""
    a, b = _coef(schedule, t, z0)
    return a * eps - b * z0


def split_v(z_t: np.ndarray, v: np.ndarray, t: IntOrArray, schedule: DiffusionSchedule) -> tuple[np.ndarray, np.ndarray]:
    """Recover (z0, eps) from a noisy sample and its v."""
    a, b = _coef(schedule, t, z_t)
    return a * z_t - b * v, b * z_t + a * v


def minsnr_weight(t: IntOrArray, schedule: DiffusionSchedule, gamma: float = MIN_SNR_GAMMA) -> np.ndarray:
    """min(SNR_t, gamma) / SNR_t, SNR clamped to [1e-8, 1e8]."""
    snr = schedule.snr(t)
    return np.minimum(snr, gamma) / snr


def guided_velocity(v_cond: np.ndarray, v_uncond: np.ndarray, w: float) -> np.ndarray:
    """Classifier-free guidance: (1 + w) v_cond - w v_uncond."""
    if w < 0:
        raise ConfigurationError(f"guidance scale must be non-negative, got {w}")
    if w == 0:
        return v_cond
    return (1.0 + w) * v_cond - w * v_uncond


def guided_prediction(net, z_t: np.ndarray, t: np.ndarray, context: np.ndarray, w: float) -> np.ndarray:
    """Network output with guidance; skips the unconditional pass when w == 0."""
    v_cond = net.predict(z_t, t, context)
    if w == 0:
        return v_cond
    return guided_velocity(v_cond, net.predict(z_t, t, context, uncond=True), w)


def diffusion_loss(
    net,
    z0: np.ndarray,
    context: np.ndarray,
    schedule: DiffusionSchedule,
    rng: np.random.Generator,
    p_uncond: float,
    gamma: float = MIN_SNR_GAMMA,
) -> Tensor:
    """Min-SNR weighted v-prediction MSE for a batch (B, G, p) of gap embeddings."""
    batch = z0.shape[0]
    t = rng.integers(1, schedule.timesteps + 1, size=batch)
    eps = rng.standard_normal(z0.shape)
    z_t = ddpm_forward(z0, t, eps, schedule)
    target = v_target(z0, eps, t, schedule)
    uncond = rng.random(batch) < p_uncond
    pred = net(Tensor(z_t), t / schedule.timesteps, Tensor(context), uncond)
    diff = pred - Tensor(target)
    per_sample = (diff * diff).mean(axis=(1, 2))
    return (per_sample * Tensor(minsnr_weight(t, schedule, gamma))).mean()


def ddim_timesteps(timesteps: int, steps: int) -> np.ndarray:
    """Uniform descending subsequence T = t_0 > ... > t_steps = 0."""
    if steps < 1 or steps > timesteps:
        raise ConfigurationError(f"DDIM steps must lie in [1, {timesteps}], got {steps}")
    return np.unique(np.round(np.linspace(0, timesteps, steps + 1)).astype(int))[::-1]


def ddim_sample(
    net,
    context: np.ndarray,
    gap_len: int,
    schedule: DiffusionSchedule,
    rng: np.random.Generator,
    steps: int = 50,
    eta: float = 0.0,
    guidance: float = 1.0,
    init: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Deterministic DDIM reverse pass from pure noise at t = T to t = 0.

    Args:
        context: (C, p) or (B, C, p) context embeddings.
        init: Optional starting noise; drawn from ``rng`` when omitted.

    Returns:
        Gap embeddings of shape (G, p) or (B, G, p).
    """
    if eta != 0.0:
        raise ConfigurationError("only deterministic DDIM (eta = 0) is supported")
    context = np.asarray(context, dtype=np.float64)
    single = context.ndim == 2
    if single:
        context = context[None]
    if context.ndim != 3:
        raise DimensionError(f"context must be (C, p) or (B, C, p), got {context.shape}")
    shape = (context.shape[0], gap_len, context.shape[2])
    z = rng.standard_normal(shape) if init is None else np.asarray(init, dtype=np.float64).reshape(shape)

    ts = ddim_timesteps(schedule.timesteps, steps)
    for t, t_prev in zip(ts[:-1], ts[1:]):
        t_in = np.full(shape[0], t / schedule.timesteps)
        v = guided_prediction(net, z, t_in, context, guidance)
        z0_hat, eps_hat = split_v(z, v, int(t), schedule)
        a_prev, b_prev = _coef(schedule, int(t_prev), z)
        z = a_prev * z0_hat + b_prev * eps_hat
    return z[0] if single else z
