"""Shared test utilities: central finite-difference gradient checks."""

from __future__ import annotations

import numpy as np

from codar import tensor as T


def numeric_grad(f, arr: np.ndarray, eps: float) -> np.ndarray:
    """Central differences of the scalar function ``f`` wrt ``arr`` (mutated in place)."""
    g = np.zeros_like(arr, dtype=np.float64)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + eps
        up = f()
        arr[i] = old - eps
        down = f()
        arr[i] = old
        g[i] = (up - down) / (2 * eps)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def gradcheck(build, inputs: list[T.Tensor], eps: float = 1e-6) -> float:
    """Max relative error between backward() and finite differences over all inputs.

    ``build`` maps the list of input tensors to a scalar Tensor and must be a
    pure function of their ``.data``.
    """
    for x in inputs:
        x.grad = np.zeros_like(x.data)
    T.backward(build(inputs))
    worst = 0.0
    for x in inputs:
        analytic = x.grad.copy()
        numeric = numeric_grad(lambda: build(inputs).item(), x.data, eps)
        worst = max(worst, rel_error(analytic, numeric))
    return worst


def leaf(rng: np.random.Generator, *shape, dtype=np.float64) -> T.Tensor:
    return T.Tensor(rng.standard_normal(shape), requires_grad=True, dtype=dtype)
