"""Central finite-difference oracles for derivative verification.

Gradients are checked against central differences of values.  Laplacians are
checked against central differences of the analytic gradient field: a direct
second difference of values at h = 1e-5 has a rounding floor around 1e-5
relative, far above the 1e-6 target, while differencing the (independently
verified) gradient keeps both truncation and rounding below it.
"""

from __future__ import annotations

import numpy as np

from .params import AnsatzParams, flatten, unflatten


def fd_gradient(value_fn, r: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d value / d coordinates by central differences; (B, N, 3) -> (B, 3N)."""
    r = np.asarray(r, dtype=np.float64)
    b, n, _ = r.shape
    out = np.empty((b, 3 * n))
    flat = r.reshape(b, -1)
    for d in range(3 * n):
        rp = flat.copy()
        rm = flat.copy()
        rp[:, d] += h
        rm[:, d] -= h
        out[:, d] = (value_fn(rp.reshape(b, n, 3)) - value_fn(rm.reshape(b, n, 3))) / (2 * h)
    return out


def fd_laplacian(grad_fn, r: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Divergence of an analytic gradient field by central differences.

    grad_fn maps (B, N, 3) -> (B, 3N); the result is (B,).
    """
    r = np.asarray(r, dtype=np.float64)
    b, n, _ = r.shape
    lap = np.zeros(b)
    flat = r.reshape(b, -1)
    for d in range(3 * n):
        rp = flat.copy()
        rm = flat.copy()
        rp[:, d] += h
        rm[:, d] -= h
        lap += (grad_fn(rp.reshape(b, n, 3))[:, d] - grad_fn(rm.reshape(b, n, 3))[:, d]) / (2 * h)
    return lap


def fd_param_gradient(value_fn, params: AnsatzParams, h: float = 1e-5) -> dict[str, np.ndarray]:
    """d value / d theta by central differences over every parameter leaf.

    value_fn(params) must return a scalar.
    """
    leaves = flatten(params)
    grads = {}
    for key, arr in leaves.items():
        g = np.zeros_like(arr, dtype=np.float64)
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            up = {**leaves}
            bumped = arr.astype(np.float64).copy()
            bumped[idx] += h
            up[key] = bumped
            f_plus = value_fn(unflatten(params, up))
            bumped = arr.astype(np.float64).copy()
            bumped[idx] -= h
            up[key] = bumped
            f_minus = value_fn(unflatten(params, up))
            g[idx] = (f_plus - f_minus) / (2 * h)
            it.iternext()
        grads[key] = g
    return grads


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - b| / max(|a|, |b|, floor); the floor keeps exact zeros
    (dead parameters, vanishing components) from dividing by zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale)) if a.size else 0.0
