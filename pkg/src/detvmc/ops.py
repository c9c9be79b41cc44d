"""Backend-generic array operations.

The wave function evaluation is written once against these functions and
runs under three carriers:

- plain numpy arrays (fast values, used by the sampler),
- :class:`detvmc.jets.Jet` (electron-coordinate gradient + Laplacian),
- :class:`detvmc.tape.Var` (reverse-mode parameter adjoints).

Signs of signed-log quantities are always plain arrays: they are piecewise
constant and carry no derivative.
"""

from __future__ import annotations

import numpy as np

from . import jets as _jets
from . import tape as _tape
from .jets import Jet, SignedLog
from .tape import Var


def value_of(x) -> np.ndarray:
    if isinstance(x, (Jet, Var)):
        return x.value
    return np.asarray(x)


def _as_float(x) -> np.ndarray:
    a = np.asarray(x)
    return a if a.dtype in (np.float32, np.float64) else a.astype(np.float64)


def _dispatch(x, method: str, np_fn):
    if isinstance(x, (Jet, Var)):
        return getattr(x, method)()
    return np_fn(_as_float(x))


def exp(x):
    return _dispatch(x, "exp", np.exp)


def log(x):
    return _dispatch(x, "log", np.log)


def sqrt(x):
    return _dispatch(x, "sqrt", np.sqrt)


def tanh(x):
    return _dispatch(x, "tanh", np.tanh)


def softplus(x):
    return _dispatch(x, "softplus",
                     lambda v: np.log1p(np.exp(-np.abs(v))) + np.maximum(v, 0.0))


def silu(x):
    return _dispatch(x, "silu", lambda v: v * 0.5 * (1.0 + np.tanh(0.5 * v)))


def log_expm1(x):
    def np_form(v):
        return np.where(v > 33.0, v + np.log1p(-np.exp(-np.minimum(v, 700.0))),
                        np.log(np.expm1(np.minimum(v, 33.0))))
    return _dispatch(x, "log_expm1", np_form)


def sum_along(x, axis: int):
    if isinstance(x, (Jet, Var)):
        return x.sum(axis)
    return np.sum(x, axis=axis)


def reshape(x, shape: tuple):
    return x.reshape(shape)


def stack(items, axis: int = -1):
    head = items[0]
    if isinstance(head, Jet):
        return _jets.stack(items, axis)
    if isinstance(head, Var):
        return _tape.stack(items, axis)
    return np.stack(items, axis=axis)


def concat(items, axis: int = -1):
    head = items[0]
    if isinstance(head, Jet):
        return _jets.concat(items, axis)
    if isinstance(head, Var):
        return _tape.concat(items, axis)
    return np.concatenate(items, axis=axis)


def matmul(x, w, bias=None):
    """x @ w (+ bias); works for any combination of carriers."""
    if isinstance(x, Jet):
        return _jets.linear(x, np.asarray(w), None if bias is None else np.asarray(bias))
    if isinstance(x, Var) or isinstance(w, Var):
        y = x @ w if isinstance(x, Var) else w.__rmatmul__(x)
        return y if bias is None else y + bias
    y = np.asarray(x) @ np.asarray(w)
    return y if bias is None else y + np.asarray(bias)


def slogdet(a) -> SignedLog:
    """Signed log-determinant of (..., n, n); 0x0 blocks give sign +1, log 0."""
    v = value_of(a)
    batch_shape = v.shape[:-2]
    if v.shape[-1] == 0:
        return SignedLog(np.ones(batch_shape), np.zeros(batch_shape))
    if isinstance(a, Jet):
        return _jets.slogdet(a)
    if isinstance(a, Var):
        sign, logabs = _tape.slogdet(a)
        return SignedLog(sign, logabs)
    sign, logabs = np.linalg.slogdet(v)
    node = (sign == 0) | ~np.isfinite(logabs)
    if np.any(node):
        sign = np.where(node, 0.0, sign)
        logabs = np.where(node, -np.inf, logabs)
    return SignedLog(sign, logabs)


def signedlog_from_values(x) -> SignedLog:
    """Represent a linear-domain quantity as (sign, log|x|).

    Exact zeros are flagged with sign 0; their logabs slot holds log(1) = 0
    and must not be consumed.
    """
    v = value_of(x)
    sign = np.sign(v)
    safe = x * sign + (sign == 0.0).astype(np.float64)
    return SignedLog(sign, log(safe))


def signedlog_to_values(sl: SignedLog):
    """Back to linear domain: sign * exp(log|x|).  Underflows honestly to 0."""
    return exp(sl.logabs) * sl.sign


def signed_logsumexp(sl: SignedLog, weights=None) -> SignedLog:
    """sum_k w_k x_k over the trailing axis of a signed-log carrier.

    The max shift is a detached constant, so derivatives of the result are
    exact for every carrier.  Exact cancellation (or an all-node input)
    yields sign 0.
    """
    lv = np.asarray(value_of(sl.logabs), dtype=np.float64)
    with np.errstate(invalid="ignore"):
        shift = np.max(np.where(sl.sign == 0.0, -np.inf, lv), axis=-1)
    shift = np.where(np.isfinite(shift), shift, 0.0)

    scaled = exp(sl.logabs - shift[..., None]) * sl.sign
    if weights is not None:
        scaled = scaled * weights
    total = sum_along(scaled, axis=-1)

    tv = value_of(total)
    out_sign = np.sign(tv)
    safe = total * out_sign + (out_sign == 0.0).astype(np.float64)
    return SignedLog(out_sign, log(safe) + shift)
