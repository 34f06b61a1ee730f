"""Reverse-process samplers for a v-prediction denoiser.

A denoiser here is any callable ``(x_t, t) -> v_hat`` on float arrays of shape
(..., L, d) with a scalar time. All integration runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diffusion import NoiseSchedule, recover_x0_eps

Denoiser = Callable[[np.ndarray, float], np.ndarray]

SOLVERS = ("ancestral", "dpm1", "dpm2")


@dataclass(frozen=True)
class SamplerConfig:
    solver: str = "dpm2"
    steps: int = 250
    seed: int = 0
    t_start: float = 1.0
    t_end: float = 1e-3
    spacing: str = "uniform_t"
    final_denoise: bool = True

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; expected one of {SOLVERS}")
        if not isinstance(self.steps, (int, np.integer)) or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps!r}")
        if not (1.0 >= self.t_start > self.t_end > 0.0):
            raise ValueError(f"need 1 >= t_start > t_end > 0, got {self.t_start}, {self.t_end}")
        if self.spacing not in ("uniform_t", "uniform_lambda"):
            raise ValueError(f"unknown spacing {self.spacing!r}")


def timesteps(config: SamplerConfig, schedule: NoiseSchedule = NoiseSchedule()) -> np.ndarray:
    n = config.steps
    if config.spacing == "uniform_t":
        ts = config.t_start + (config.t_end - config.t_start) * np.arange(n + 1) / n
    else:
        lam0, lam1 = schedule.log_snr(config.t_start), schedule.log_snr(config.t_end)
        if not np.isfinite(lam0):
            raise ValueError("uniform_lambda spacing needs t_start < 1 (log-SNR is -inf at t=1)")
        ts = schedule.inverse_log_snr(lam0 + (lam1 - lam0) * np.arange(n + 1) / n)
    ts[0], ts[-1] = config.t_start, config.t_end
    if np.any(np.diff(ts) >= 0):
        raise ValueError("time grid is not strictly decreasing; too many steps for this range")
    return ts


def _predict(denoiser: Denoiser, x: np.ndarray, t: float, schedule: NoiseSchedule):
    v = np.asarray(denoiser(x, t), dtype=np.float64)
    if v.shape != x.shape:
        raise ValueError(f"denoiser returned shape {v.shape} for input {x.shape}")
    return recover_x0_eps(x, v, t, schedule)


def ancestral_noise_level(t: float, t_next: float, schedule: NoiseSchedule = NoiseSchedule()) -> float:
    """DDPM posterior std for the hop t -> t_next, clamped to [0, sigma(t_next)]."""
    a, s = schedule.alpha_sigma(t)
    an, sn = schedule.alpha_sigma(t_next)
    if an == 0.0 or s == 0.0:
        return 0.0
    ratio = (a * a * sn * sn) / (an * an * s * s)
    return float(np.clip(sn * np.sqrt(max(1.0 - ratio, 0.0)), 0.0, sn))


def _init_noise(config: SamplerConfig, shape) -> tuple[np.random.Generator, np.ndarray]:
    rng = np.random.default_rng(config.seed)
    return rng, rng.standard_normal(tuple(shape))


def _finish(denoiser, x, config, schedule):
    if config.final_denoise:
        return _predict(denoiser, x, config.t_end, schedule)[0]
    return x


def ancestral_sample(denoiser: Denoiser, config: SamplerConfig, shape,
                     schedule: NoiseSchedule = NoiseSchedule(), eta: float = 1.0) -> np.ndarray:
    """Stochastic reverse process; ``eta`` scales the posterior noise (0 gives DDIM)."""
    rng, x = _init_noise(config, shape)
    ts = timesteps(config, schedule)
    for t, tn in zip(ts[:-1], ts[1:]):
        x0, eps = _predict(denoiser, x, t, schedule)
        an, sn = schedule.alpha_sigma(tn)
        noise = eta * ancestral_noise_level(t, tn, schedule)
        noise = min(noise, sn)
        x = an * x0 + np.sqrt(sn * sn - noise * noise) * eps
        if noise > 0:
            x = x + noise * rng.standard_normal(x.shape)
    return _finish(denoiser, x, config, schedule)


def _ddim_step(denoiser, x, t, tn, schedule):
    x0, eps = _predict(denoiser, x, t, schedule)
    an, sn = schedule.alpha_sigma(tn)
    return an * x0 + sn * eps, eps


def _dpm2_step(denoiser, x, t, tn, schedule, r: float = 0.5):
    lam_t, lam_n = schedule.log_snr(t), schedule.log_snr(tn)
    if not np.isfinite(lam_t):
        # log-SNR is -inf at alpha=0, so there is no midpoint in lambda; take a
        # first-order step (its O(h^2) local error does not spoil global order 2)
        return _ddim_step(denoiser, x, t, tn, schedule)[0]
    h = lam_n - lam_t
    tm = schedule.inverse_log_snr(lam_t + r * h)
    x_first, eps_t = _ddim_step(denoiser, x, t, tn, schedule)
    u, _ = _ddim_step(denoiser, x, t, tm, schedule)
    _, eps_m = _predict(denoiser, u, tm, schedule)
    r_eff = (schedule.log_snr(tm) - lam_t) / h
    _, sn = schedule.alpha_sigma(tn)
    return x_first - sn * np.expm1(h) / (2.0 * r_eff) * (eps_m - eps_t)


def dpm_solver_sample(denoiser: Denoiser, config: SamplerConfig, shape, order: int | None = None,
                      schedule: NoiseSchedule = NoiseSchedule()) -> np.ndarray:
    """Deterministic exponential-integrator solve in log-SNR (DPM-Solver-1/2).

    The order-1 update (alpha'/alpha) x - sigma' (e^h - 1) eps_hat is evaluated in
    the algebraically equal form alpha' x0_hat + sigma' eps_hat, which stays finite
    at t=1 where alpha=0.
    """
    if order is None:
        order = {"dpm1": 1, "dpm2": 2}.get(config.solver, 2)
    if order not in (1, 2):
        raise ValueError(f"DPM-Solver order must be 1 or 2, got {order}")
    _, x = _init_noise(config, shape)
    ts = timesteps(config, schedule)
    for t, tn in zip(ts[:-1], ts[1:]):
        if order == 1:
            x = _ddim_step(denoiser, x, t, tn, schedule)[0]
        else:
            x = _dpm2_step(denoiser, x, t, tn, schedule)
    return _finish(denoiser, x, config, schedule)


def sample(denoiser: Denoiser, config: SamplerConfig, shape,
           schedule: NoiseSchedule = NoiseSchedule()) -> np.ndarray:
    if config.solver == "ancestral":
        return ancestral_sample(denoiser, config, shape, schedule)
    return dpm_solver_sample(denoiser, config, shape, schedule=schedule)


# -- analytic denoisers used as oracles ---------------------------------------

def point_denoiser(point: np.ndarray, schedule: NoiseSchedule = NoiseSchedule()) -> Denoiser:
    """Exact v-prediction for a dataset holding the single point ``point``."""
    point = np.asarray(point, dtype=np.float64)

    def f(x, t):
        a, s = schedule.alpha_sigma(t)
        eps = (x - a * point) / s
        return a * eps - s * point

    return f


def gaussian_denoiser(mean: float, std: float, schedule: NoiseSchedule = NoiseSchedule()) -> Denoiser:
    """Exact E[v | x_t] when every coordinate of x0 is iid N(mean, std^2)."""

    def f(x, t):
        a, s = schedule.alpha_sigma(t)
        var = a * a * std * std + s * s
        return a * s * (1.0 - std * std) / var * (x - a * mean) - s * mean

    return f


def gaussian_ode_solution(x_start: np.ndarray, t: float, mean: float, std: float,
                          t_start: float = 1.0, schedule: NoiseSchedule = NoiseSchedule()):
    """Closed-form probability-flow ODE map from ``t_start`` to ``t`` for Gaussian data."""
    a0, s0 = schedule.alpha_sigma(t_start)
    a, s = schedule.alpha_sigma(t)
    z = (x_start - a0 * mean) / np.sqrt(a0 * a0 * std * std + s0 * s0)
    return a * mean + np.sqrt(a * a * std * std + s * s) * z
