"""Adam with decoupled weight decay and global-norm clipping, plus LR schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.0
    grad_clip_norm: float | None = 1.0
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState,
              lr: float | None = None, decay_mask: dict[str, bool] | None = None) -> float:
    """Apply one in-place update and return the pre-clip global gradient norm.

    `lr` overrides `state.lr` for this step (schedules live with the caller).
    Weight decay is skipped for names mapped to False in `decay_mask`.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for parameter {name!r}")
    lr = state.lr if lr is None else lr
    norm = global_grad_norm(grads)
    clip = 1.0
    if state.grad_clip_norm is not None and norm > state.grad_clip_norm:
        clip = state.grad_clip_norm / (norm + 1e-12)

    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros(p.shape)
        g = g.astype(np.float64) * clip
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros(p.shape)
            v = np.zeros(p.shape)
        if m.shape != p.shape:
            raise ValueError(f"moment buffer for {name!r} has shape {m.shape}, parameter {p.shape}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        w = p.data.astype(np.float64)
        if state.weight_decay and (decay_mask is None or decay_mask.get(name, True)):
            w = w - lr * state.weight_decay * w
        w = w - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data = w.astype(p.dtype)
    return norm


class Adam:
    """Thin stateful wrapper over :func:`adam_step` for a named parameter set."""

    def __init__(self, params: dict[str, Tensor], lr=1e-3, betas=(0.9, 0.95), eps=1e-8,
                 weight_decay=0.0, grad_clip_norm: float | None = 1.0):
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps,
                               weight_decay=weight_decay, grad_clip_norm=grad_clip_norm)
        # matrices decay, vectors (biases, norm gains) do not
        self.decay_mask = {k: p.ndim >= 2 for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float | None = None) -> float:
        grads = {k: (p.grad if p.grad is not None else np.zeros(p.shape)) for k, p in self.params.items()}
        return adam_step(self.params, grads, self.state, lr=lr, decay_mask=self.decay_mask)


def lr_at(step: int, total_steps: int, peak_lr: float, warmup_frac: float = 0.05,
          schedule: str = "cosine", min_lr: float = 0.0) -> float:
    """Linear warmup to `peak_lr`, then cosine annealing or constant. `step` is 0-based."""
    if not 0.0 <= warmup_frac < 1.0:
        raise ValueError("warmup_frac must lie in [0, 1)")
    warm = int(round(warmup_frac * total_steps))
    if warm > 0 and step < warm:
        return peak_lr * (step + 1) / warm
    if schedule == "constant":
        return peak_lr
    if schedule != "cosine":
        raise ValueError(f"unknown lr schedule {schedule!r}")
    span = max(total_steps - warm, 1)
    frac = min(max(step - warm, 0) / span, 1.0)
    return min_lr + 0.5 * (peak_lr - min_lr) * (1.0 + math.cos(math.pi * frac))
