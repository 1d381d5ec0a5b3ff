"""Finite-difference gradient oracles.

Central differences with step h around a scalar-valued function; used by
the test suite to verify every analytic backward pass independently.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np


def numerical_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of scalar f at x, one element at a time."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def numerical_gradients(
    f: Callable[[Mapping[str, np.ndarray]], float],
    values: Mapping[str, np.ndarray],
    h: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Central-difference gradients of scalar f with respect to each named array."""
    values = {k: np.asarray(v, dtype=np.float64).copy() for k, v in values.items()}
    out: dict[str, np.ndarray] = {}
    for name in values:
        def f_one(x: np.ndarray, _name=name) -> float:
            probe = dict(values)
            probe[_name] = x
            return float(f(probe))

        out[name] = numerical_gradient(f_one, values[name], h=h)
    return out


def max_relative_error(
    analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-7
) -> float:
    """max over elements of |a - n| / max(|a|, |n|, atol)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {n.shape}")
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), atol)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
