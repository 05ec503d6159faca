"""Forward noising process, cosine variance schedule, and the 8-step
ancestral sampler with classifier-free guidance on command history.

The network predicts the clean window directly; each reverse step resamples
x_{t-1} from the posterior q(x_{t-1} | x_t, x0_hat) with the small-variance
choice beta_tilde_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..errors import ValidationError
from .network import ConditionTokens, ModelConfig, ModelOutput, forward
from .autodiff import Tensor


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray  # (T,), beta_t for t = 1..T
    alpha_bars: np.ndarray  # (T,), abar_t = prod_{i<=t} (1 - beta_i)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        abars = np.asarray(self.alpha_bars, dtype=np.float64)
        if betas.shape != abars.shape or betas.ndim != 1 or len(betas) < 1:
            raise ValidationError("schedule arrays must be equal-length 1-D")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValidationError("betas must lie in (0, 1)")
        if np.any(abars <= 0.0) or np.any(abars >= 1.0):
            raise ValidationError("alpha_bars must lie in (0, 1)")
        if np.any(np.diff(abars) >= 0.0):
            raise ValidationError("alpha_bars must be strictly decreasing")
        if np.max(np.abs(abars - np.cumprod(1.0 - betas))) > 1e-12:
            raise ValidationError("alpha_bars do not match cumprod(1 - betas)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", abars)

    @property
    def t_steps(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t) -> np.ndarray:
        """abar_t with abar_0 = 1 (t may be 0 for posterior terms)."""
        t = np.asarray(t, dtype=np.int64)
        padded = np.concatenate([[1.0], self.alpha_bars])
        return padded[t]


def make_schedule(t_steps: int = 8) -> DiffusionSchedule:
    """Cosine schedule: abar_t = f(t/T) / f(0), f(u) = cos((u + s)/(1 + s) * pi/2)^2
    with s = 0.008; betas are back-solved and clipped to (1e-4, 0.999), then
    abar is recomputed from the clipped betas so the product identity is exact.
    """
    if t_steps < 1:
        raise ValidationError("need at least one diffusion step")
    s = 0.008

    def f(u):
        return np.cos((u + s) / (1.0 + s) * np.pi / 2.0) ** 2

    u = np.arange(t_steps + 1, dtype=np.float64) / t_steps
    abar = f(u) / f(0.0)  # abar[0] = 1 by construction
    betas = 1.0 - abar[1:] / abar[:-1]
    betas = np.clip(betas, 1e-4, 0.999)
    alpha_bars = np.cumprod(1.0 - betas)
    return DiffusionSchedule(betas=betas, alpha_bars=alpha_bars)


def q_sample(x0: np.ndarray, t, eps: np.ndarray, schedule: DiffusionSchedule) -> np.ndarray:
    """Noise clean windows to step t: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.

    ``t`` is an int or (B,) array in 1..T; eps must match x0's shape and is
    injected by the caller so tests can pin it.
    """
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise ValidationError(f"eps shape {eps.shape} must match x0 {x0.shape}")
    t_arr = np.asarray(t, dtype=np.int64)
    if np.any(t_arr < 1) or np.any(t_arr > schedule.t_steps):
        raise ValidationError(f"t out of range 1..{schedule.t_steps}")
    abar = schedule.alpha_bars[t_arr - 1].astype(x0.dtype, copy=False)
    extra = x0.ndim - abar.ndim
    abar = abar.reshape(abar.shape + (1,) * extra)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def posterior_mean_var(
    x_t: np.ndarray, x0_hat: np.ndarray, t: int, schedule: DiffusionSchedule
) -> tuple[np.ndarray, float]:
    """Mean and variance of q(x_{t-1} | x_t, x0_hat)."""
    beta = schedule.betas[t - 1]
    abar_t = schedule.alpha_bars[t - 1]
    abar_prev = float(schedule.alpha_bar(t - 1))
    coef_x0 = np.sqrt(abar_prev) * beta / (1.0 - abar_t)
    coef_xt = np.sqrt(1.0 - beta) * (1.0 - abar_prev) / (1.0 - abar_t)
    var = (1.0 - abar_prev) / (1.0 - abar_t) * beta
    mean = coef_x0 * x0_hat + coef_xt * x_t
    return mean, float(var)


def sample_window(
    params: dict[str, Tensor],
    cfg: ModelConfig,
    schedule: DiffusionSchedule,
    cond: ConditionTokens,
    uncond: Optional[ConditionTokens],
    rng: np.random.Generator,
    guidance_scale: Optional[float] = None,
    forward_fn: Callable = forward,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ancestral sampling of one command window per batch row.

    Returns (x0 clamped to [-1, 1], behavior_logits, mode_logits); the
    logits come from the conditional pass of the final (t = 1) step. With
    guidance scale exactly 1 the unconditional pass is skipped, which is
    algebraically identical and halves the compute.
    """
    scale = cfg.guidance_scale if guidance_scale is None else float(guidance_scale)
    if scale != 1.0 and uncond is None:
        raise ValidationError("guidance needs an unconditional token set")
    dt = cfg.np_dtype
    b = cond.batch
    x = rng.standard_normal((b, cfg.n_future, cfg.j_channels)).astype(dt)
    out_c = None
    x0 = x
    for t in range(schedule.t_steps, 0, -1):
        out_c = forward_fn(params, cfg, x, t, cond)
        x0 = out_c.x0_hat.data
        if scale != 1.0:
            out_u = forward_fn(params, cfg, x, t, uncond)
            x0 = out_u.x0_hat.data + scale * (x0 - out_u.x0_hat.data)
        if t > 1:
            mean, var = posterior_mean_var(x, x0, t, schedule)
            noise = rng.standard_normal(x.shape).astype(dt)
            x = (mean + np.sqrt(var) * noise).astype(dt, copy=False)
    return (
        np.clip(x0, -1.0, 1.0).astype(dt, copy=False),
        out_c.behavior_logits.data.copy(),
        out_c.mode_logits.data.copy(),
    )
