"""Variance-preserving diffusion with a cosine schedule and v-prediction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _as_tensor, mean, mul


@dataclass(frozen=True)
class NoiseSchedule:
    """Cosine schedule: alpha_bar(t) = cos^2(((t+s)/(1+s)) pi/2) / cos^2((s/(1+s)) pi/2)."""

    s: float = 0.008

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError("cosine offset s must be positive")

    @property
    def _c0(self) -> float:
        return math.cos(self.s / (1.0 + self.s) * math.pi / 2) ** 2

    def alpha_bar(self, t):
        t = _check_time(t)
        ab = np.cos((t + self.s) / (1.0 + self.s) * np.pi / 2) ** 2 / self._c0
        # pin the endpoints; cos(pi/2) is 6e-17 in floating point
        ab = np.where(t >= 1.0, 0.0, np.where(t <= 0.0, 1.0, ab))
        return np.clip(ab, 0.0, 1.0)

    def alpha_sigma(self, t):
        ab = self.alpha_bar(t)
        a, s = np.sqrt(ab), np.sqrt(1.0 - ab)
        if np.ndim(a) == 0:
            return float(a), float(s)
        return a, s

    def log_snr(self, t):
        """lambda(t) = log(alpha/sigma); -inf at t=1, +inf at t=0."""
        a, s = self.alpha_sigma(t)
        with np.errstate(divide="ignore"):
            return np.log(a) - np.log(s)

    def inverse_log_snr(self, lam):
        ab = 1.0 / (1.0 + np.exp(-2.0 * np.asarray(lam, dtype=np.float64)))
        t = 2.0 / np.pi * (1.0 + self.s) * np.arccos(np.sqrt(ab * self._c0)) - self.s
        t = np.clip(t, 0.0, 1.0)
        return float(t) if np.ndim(t) == 0 else t

    def snr(self, t):
        a, s = self.alpha_sigma(t)
        with np.errstate(divide="ignore"):
            return np.asarray(a, dtype=np.float64) ** 2 / np.asarray(s, dtype=np.float64) ** 2


def _check_time(t):
    t = np.asarray(t, dtype=np.float64)
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError(f"diffusion time must lie in [0, 1], got {t}")
    return t


def alpha_sigma(schedule: NoiseSchedule, t):
    return schedule.alpha_sigma(t)


def _coef(c, ndim: int):
    """Broadcast a scalar or per-batch coefficient over trailing (L, d) axes."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim == 0:
        return c
    return c.reshape(c.shape + (1,) * (ndim - c.ndim))


def _check_pair(name: str, a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


def forward_diffuse(x0, eps, t, schedule: NoiseSchedule = NoiseSchedule()):
    x0, eps = np.asarray(x0), np.asarray(eps)
    _check_pair("forward_diffuse", x0, eps)
    a, s = schedule.alpha_sigma(t)
    dtype = np.result_type(x0.dtype, eps.dtype)
    return (_coef(a, x0.ndim) * x0 + _coef(s, x0.ndim) * eps).astype(dtype)


def velocity_target(x0, eps, t, schedule: NoiseSchedule = NoiseSchedule()):
    x0, eps = np.asarray(x0), np.asarray(eps)
    _check_pair("velocity_target", x0, eps)
    a, s = schedule.alpha_sigma(t)
    dtype = np.result_type(x0.dtype, eps.dtype)
    return (_coef(a, x0.ndim) * eps - _coef(s, x0.ndim) * x0).astype(dtype)


def recover_x0_eps(x_t, v_hat, t, schedule: NoiseSchedule = NoiseSchedule()):
    """Return (x0_hat, eps_hat) = (a x_t - s v, s x_t + a v)."""
    x_t, v_hat = np.asarray(x_t), np.asarray(v_hat)
    _check_pair("recover_x0_eps", x_t, v_hat)
    a, s = schedule.alpha_sigma(t)
    a, s = _coef(a, x_t.ndim), _coef(s, x_t.ndim)
    dtype = np.result_type(x_t.dtype, v_hat.dtype)
    return (a * x_t - s * v_hat).astype(dtype), (s * x_t + a * v_hat).astype(dtype)


@dataclass(frozen=True)
class LossWeighting:
    kind: str = "constant"
    gamma: float = 5.0

    def __post_init__(self):
        if self.kind not in ("constant", "snr"):
            raise ValueError(f"unknown loss weighting {self.kind!r}")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")

    def __call__(self, t, schedule: NoiseSchedule = NoiseSchedule()):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "constant":
            return np.ones_like(t)
        return np.minimum(schedule.snr(t), self.gamma)


def diffusion_loss(v_hat, v_t, weighting: LossWeighting = LossWeighting(), t=None,
                   schedule: NoiseSchedule = NoiseSchedule()) -> Tensor:
    """w(t)-weighted squared error, averaged over batch, positions and channels.

    `v_hat` may be a graph Tensor (training) or an array; `t` is a scalar or one
    time per batch element.
    """
    v_hat = _as_tensor(v_hat)
    v_t = np.asarray(v_t.data if isinstance(v_t, Tensor) else v_t)
    if v_hat.shape != v_t.shape:
        raise ValueError(f"diffusion_loss: shape mismatch {v_hat.shape} vs {v_t.shape}")
    if not (np.all(np.isfinite(v_hat.data)) and np.all(np.isfinite(v_t))):
        raise FloatingPointError("diffusion_loss: non-finite input")
    diff = v_hat - Tensor(v_t, dtype=v_hat.dtype)
    sq = mul(diff, diff)
    if t is None:
        w = np.ones(())
    else:
        w = weighting(t, schedule)
    w = _coef(w, v_hat.ndim)
    if np.any(~np.isfinite(w)):
        raise FloatingPointError("diffusion_loss: non-finite weight")
    if np.all(w == 1.0):
        return mean(sq)
    return mean(mul(sq, Tensor(w, dtype=v_hat.dtype)))


def sample_training_times(rng: np.random.Generator, n: int, t_min: float = 1e-4) -> np.ndarray:
    """Uniform draws on (t_min, 1]."""
    u = rng.random(n)
    return t_min + (1.0 - t_min) * (1.0 - u)
