"""DDPM forward process, epsilon-prediction objective and ancestral sampling with cfg."""
import logging
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from tqdm import tqdm

from dic.engine import ops
from dic.engine.tensor import Tensor
from dic.errors import DiffusionError
from dic.services.conditioning import apply_label_drop

logger = logging.getLogger(__name__)


class Denoiser(Protocol):
    num_classes: int
    label_drop_prob: float

    def forward(self, x, t, y) -> Tensor: ...


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step tables in 64-bit. Index t runs over [0, T)."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    alpha_bars_prev: np.ndarray
    posterior_variance: np.ndarray
    posterior_mean_coef1: np.ndarray
    posterior_mean_coef2: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    @classmethod
    def from_betas(cls, betas, check: bool = True) -> "NoiseSchedule":
        betas = np.asarray(betas, dtype=np.float64)
        if check and (betas.ndim != 1 or betas.size < 1 or np.any(betas <= 0) or np.any(betas >= 1)):
            raise DiffusionError("betas must be a non-empty vector in (0, 1)", field="betas")
        if check and np.any(np.diff(betas) < 0):
            raise DiffusionError("betas must be non-decreasing", field="betas")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        alpha_bars_prev = np.concatenate([[1.0], alpha_bars[:-1]])
        one_minus = 1.0 - alpha_bars
        with np.errstate(divide="ignore", invalid="ignore"):
            safe = np.where(one_minus > 0, one_minus, 1.0)
            variance = np.where(one_minus > 0, betas * (1.0 - alpha_bars_prev) / safe, 0.0)
            coef1 = np.where(one_minus > 0, betas * np.sqrt(alpha_bars_prev) / safe, 1.0)
            coef2 = np.where(one_minus > 0, (1.0 - alpha_bars_prev) * np.sqrt(alphas) / safe, 0.0)
        return cls(betas, alphas, alpha_bars, alpha_bars_prev, variance, coef1, coef2)


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule."""
    if T < 1:
        raise DiffusionError(f"T must be >= 1, got {T}", field="T")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise DiffusionError(
            f"need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}", field="beta_start"
        )
    return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, T, dtype=np.float64))


def _check_t(t: np.ndarray, schedule: NoiseSchedule) -> None:
    if t.size and (t.min() < 0 or t.max() >= schedule.T):
        raise DiffusionError(f"timestep out of range [0, {schedule.T})", field="t")


def _per_sample(table: np.ndarray, t: np.ndarray, like: np.ndarray) -> np.ndarray:
    return table[t].astype(like.dtype).reshape((-1,) + (1,) * (like.ndim - 1))


def q_sample(x0: np.ndarray, t, noise: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """sqrt(abar_t) x0 + sqrt(1 - abar_t) noise, with t per sample."""
    x0 = np.asarray(x0)
    t = np.asarray(t, dtype=np.int64).reshape(-1)
    if noise.shape != x0.shape:
        raise DiffusionError(f"noise shape {noise.shape} differs from x0 {x0.shape}", field="noise")
    _check_t(t, schedule)
    a = _per_sample(np.sqrt(schedule.alpha_bars), t, x0)
    b = _per_sample(np.sqrt(1.0 - schedule.alpha_bars), t, x0)
    return a * x0 + b * noise


def training_loss(
    model: Denoiser, x0: np.ndarray, y: np.ndarray, rng: np.random.Generator, schedule: NoiseSchedule,
    t: np.ndarray | None = None, noise: np.ndarray | None = None,
) -> Tensor:
    """MSE between predicted and true noise at uniformly drawn timesteps.

    Label drop happens here, once per sample, before the model sees y.
    """
    x0 = np.asarray(x0)
    n = x0.shape[0]
    if t is None:
        t = rng.integers(0, schedule.T, size=n)
    if noise is None:
        noise = rng.standard_normal(x0.shape).astype(x0.dtype)
    y_used = apply_label_drop(y, model.label_drop_prob, rng, model.num_classes)
    x_t = q_sample(x0, t, noise, schedule)
    pred = model.forward(Tensor(x_t), t, y_used)
    return ops.mse_loss(pred, Tensor(noise))


def cfg_combine(eps_cond, eps_uncond, s: float) -> np.ndarray:
    """eps_u + s (eps_c - eps_u); s = 1 returns eps_c unchanged."""
    eps_cond = np.asarray(eps_cond)
    eps_uncond = np.asarray(eps_uncond)
    if eps_cond.shape != eps_uncond.shape:
        raise DiffusionError(f"cfg shapes differ: {eps_cond.shape} vs {eps_uncond.shape}", field="eps")
    if s == 1.0:
        return eps_cond.copy()
    return eps_uncond + s * (eps_cond - eps_uncond)


def predict_eps(model: Denoiser, x_t: np.ndarray, t: int, y: np.ndarray, s: float, batched: bool = True) -> np.ndarray:
    n = x_t.shape[0]
    steps = np.full(n, t, dtype=np.int64)
    if s == 1.0:
        return model.forward(Tensor(x_t), steps, y).data
    null = np.full(n, model.num_classes, dtype=np.int64)
    if batched:
        out = model.forward(
            Tensor(np.concatenate([x_t, x_t])), np.concatenate([steps, steps]), np.concatenate([y, null])
        ).data
        eps_cond, eps_uncond = out[:n], out[n:]
    else:
        eps_cond = model.forward(Tensor(x_t), steps, y).data
        eps_uncond = model.forward(Tensor(x_t), steps, null).data
    return cfg_combine(eps_cond, eps_uncond, s)


def ddpm_step(
    model: Denoiser, x_t: np.ndarray, t: int, y: np.ndarray, s: float, rng: np.random.Generator,
    schedule: NoiseSchedule, batched: bool = True, clip_denoised: bool = False,
) -> np.ndarray:
    """One ancestral step x_t -> x_{t-1} with fixed variance beta-tilde; no noise at t = 0."""
    if not 0 <= t < schedule.T:
        raise DiffusionError(f"timestep {t} out of range [0, {schedule.T})", field="t")
    if s < 1.0:
        raise DiffusionError(f"guidance scale must be >= 1, got {s}", field="cfg")
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    eps = predict_eps(model, x_t, t, y, s, batched=batched)

    abar = schedule.alpha_bars[t]
    x0_pred = (x_t - np.sqrt(1.0 - abar) * eps) / np.sqrt(abar)
    if clip_denoised:
        x0_pred = np.clip(x0_pred, -1.0, 1.0)
    mean = schedule.posterior_mean_coef1[t] * x0_pred + schedule.posterior_mean_coef2[t] * x_t
    if t > 0:
        mean = mean + np.sqrt(schedule.posterior_variance[t]) * rng.standard_normal(x_t.shape)
    return mean.astype(x_t.dtype)


def sample(
    model: Denoiser, n: int, y, s: float, schedule: NoiseSchedule, rng: np.random.Generator,
    shape: tuple[int, int, int] | None = None, dtype=np.float32, batched: bool = True,
    progress: bool = True, clip_denoised: bool = False,
) -> np.ndarray:
    """Run T ancestral steps from pure noise."""
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.shape != (n,):
        raise DiffusionError(f"need {n} labels, got {y.shape}", field="y")
    config = getattr(model, "config", None)
    if shape is None:
        if config is None:
            raise DiffusionError("sample shape is required for models without a config", field="shape")
        shape = (config.in_channels, config.image_size, config.image_size)
    if config is not None and config.num_timesteps != schedule.T:
        raise DiffusionError(
            f"model trained for {config.num_timesteps} steps, schedule has {schedule.T}", field="T"
        )
    x = rng.standard_normal((n, *shape)).astype(dtype)
    steps = range(schedule.T - 1, -1, -1)
    for t in tqdm(steps, desc=f"sampling cfg={s}", disable=not progress, leave=False):
        x = ddpm_step(model, x, t, y, s, rng, schedule, batched=batched, clip_denoised=clip_denoised)
    if not np.all(np.isfinite(x)):
        raise DiffusionError("sampling produced non-finite values", field="x")
    return x
