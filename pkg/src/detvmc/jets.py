"""Forward-Laplacian jets: (value, gradient, Laplacian) triples.

A Jet carries, for every element of ``value``, the gradient with respect to
all 3N electron coordinates (trailing axis of ``grad``) and the Laplacian
(sum of second derivatives over those coordinates).  Propagating jets through
the full wave function evaluation yields the exact kinetic-energy ingredients
in one forward pass, with no finite differencing.

Shape convention: ``value`` has arbitrary shape S (leading axes are free for
batching), ``grad`` has shape S + (dim,) with dim = 3N, ``lap`` has shape S.
All operations are pure; jets are never mutated in place.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import SingularEvaluationError

# log-space threshold below which a determinant (relative to the product of
# its row norms) is treated as exactly zero, i.e. on the nodal surface
NEAR_SINGULAR_LOG = np.log(1e-300)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # tanh form is stable for large |v| of either sign
    return 0.5 * (1.0 + np.tanh(0.5 * v))


@dataclass(frozen=True)
class Jet:
    """Value, coordinate gradient, and coordinate Laplacian of an array."""

    value: np.ndarray
    grad: np.ndarray
    lap: np.ndarray

    # keep numpy from absorbing jets into object arrays; reflected dunders run instead
    __array_ufunc__ = None

    @property
    def dim(self) -> int:
        """Number of coordinates differentiated against (3N)."""
        return self.grad.shape[-1]

    # ---------- arithmetic ----------
    def __add__(self, other) -> "Jet":
        if isinstance(other, Jet):
            return Jet(self.value + other.value, self.grad + other.grad, self.lap + other.lap)
        other = np.asarray(other)
        return Jet(self.value + other, _keep_grad(self.grad, self.value + other), self.lap + np.zeros_like(self.value + other))

    __radd__ = __add__

    def __sub__(self, other) -> "Jet":
        if isinstance(other, Jet):
            return Jet(self.value - other.value, self.grad - other.grad, self.lap - other.lap)
        return self.__add__(-np.asarray(other))

    def __rsub__(self, other) -> "Jet":
        return (-self).__add__(other)

    def __neg__(self) -> "Jet":
        return Jet(-self.value, -self.grad, -self.lap)

    def __mul__(self, other) -> "Jet":
        if isinstance(other, Jet):
            a, b = self, other
            value = a.value * b.value
            grad = a.grad * b.value[..., None] + b.grad * a.value[..., None]
            lap = a.lap * b.value + b.lap * a.value + 2.0 * np.sum(a.grad * b.grad, axis=-1)
            return Jet(value, grad, lap)
        other = np.asarray(other)
        return Jet(self.value * other, self.grad * other[..., None] if other.ndim else self.grad * other,
                   self.lap * other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Jet":
        if isinstance(other, Jet):
            a, b = self, other
            if np.any(b.value == 0.0):
                raise SingularEvaluationError("jet division by zero (nodal or singular evaluation)")
            inv = 1.0 / b.value
            value = a.value * inv
            grad = (a.grad - value[..., None] * b.grad) * inv[..., None]
            lap = (a.lap - 2.0 * np.sum(grad * b.grad, axis=-1) - value * b.lap) * inv
            return Jet(value, grad, lap)
        return self.__mul__(1.0 / np.asarray(other))

    def __rtruediv__(self, other) -> "Jet":
        return self.reciprocal().__mul__(other)

    def reciprocal(self) -> "Jet":
        if np.any(self.value == 0.0):
            raise SingularEvaluationError("jet reciprocal of zero (nodal or singular evaluation)")
        v = self.value
        return self._unary(1.0 / v, -1.0 / v**2, 2.0 / v**3)

    # ---------- elementwise functions ----------
    def _unary(self, val: np.ndarray, d1: np.ndarray, d2: np.ndarray) -> "Jet":
        grad = d1[..., None] * self.grad
        lap = d1 * self.lap + d2 * np.sum(self.grad * self.grad, axis=-1)
        return Jet(val, grad, lap)

    def exp(self) -> "Jet":
        e = np.exp(self.value)
        return self._unary(e, e, e)

    def log(self) -> "Jet":
        v = self.value
        if np.any(v <= 0.0):
            raise SingularEvaluationError("jet log of non-positive value")
        return self._unary(np.log(v), 1.0 / v, -1.0 / v**2)

    def sqrt(self) -> "Jet":
        v = self.value
        if np.any(v <= 0.0):
            raise SingularEvaluationError("jet sqrt of non-positive value")
        s = np.sqrt(v)
        return self._unary(s, 0.5 / s, -0.25 / (v * s))

    def tanh(self) -> "Jet":
        t = np.tanh(self.value)
        sech2 = 1.0 - t * t
        return self._unary(t, sech2, -2.0 * t * sech2)

    def softplus(self) -> "Jet":
        v = self.value
        val = np.log1p(np.exp(-np.abs(v))) + np.maximum(v, 0.0)
        s = _sigmoid(v)
        return self._unary(val, s, s * (1.0 - s))

    def silu(self) -> "Jet":
        v = self.value
        s = _sigmoid(v)
        d1 = s + v * s * (1.0 - s)
        d2 = s * (1.0 - s) * (2.0 + v * (1.0 - 2.0 * s))
        return self._unary(v * s, d1, d2)

    def log_expm1(self) -> "Jet":
        """log(e^v - 1) for v > 0, stable at both ends."""
        v = self.value
        if np.any(v <= 0.0):
            raise SingularEvaluationError("log_expm1 requires positive input")
        val = np.where(v > 33.0, v + np.log1p(-np.exp(-np.minimum(v, 700.0))),
                       np.log(np.expm1(np.minimum(v, 33.0))))
        em = np.expm1(-v)  # in (-1, 0)
        d1 = -1.0 / em
        d2 = -np.exp(-v) / (em * em)
        return self._unary(val, d1, d2)

    def abs(self) -> "Jet":
        """Sign-safe absolute value; exact zeros yield a zero jet entry."""
        return self * np.sign(self.value)

    # ---------- structure ----------
    def __getitem__(self, key) -> "Jet":
        # basic indexing on the value axes only (no newaxis / ellipsis)
        return Jet(self.value[key], self.grad[key], self.lap[key])

    def reshape(self, *shape) -> "Jet":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Jet(self.value.reshape(shape), self.grad.reshape(shape + (self.dim,)),
                   self.lap.reshape(shape))

    def sum(self, axis: int) -> "Jet":
        axis = axis % self.value.ndim
        return Jet(self.value.sum(axis=axis), self.grad.sum(axis=axis), self.lap.sum(axis=axis))


def seed_coordinates(r: np.ndarray) -> Jet:
    """Seed electron positions (..., N, 3) as jets with one-hot gradients.

    Entry (i, d) carries d/dx_{3i+d}; the coordinate dimension is 3N.
    """
    r = np.asarray(r)
    if r.dtype not in (np.float32, np.float64):
        r = r.astype(np.float64)
    if not np.all(np.isfinite(r)):
        raise ValueError("non-finite electron coordinates")
    if r.ndim < 2 or r.shape[-1] != 3:
        raise ValueError(f"expected positions shaped (..., N, 3), got {r.shape}")
    n = r.shape[-2]
    dim = 3 * n
    eye = np.eye(dim, dtype=r.dtype).reshape(n, 3, dim)
    grad = np.broadcast_to(eye, r.shape + (dim,)).copy()
    return Jet(r, grad, np.zeros_like(r))


def seed_constant(x, dim: int) -> Jet:
    """Wrap a constant (grad = 0, lap = 0) in the given coordinate dimension."""
    x = np.asarray(x)
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float64)
    return Jet(x, np.zeros(x.shape + (dim,), dtype=x.dtype), np.zeros_like(x))


def linear(x: Jet, weight: np.ndarray, bias: np.ndarray | None = None) -> Jet:
    """Apply y = x @ weight (+ bias) with constant weights.

    Gradients and Laplacians transform by the same weight; the bias shifts
    values only.
    """
    if x.value.shape[-1] != weight.shape[0]:
        raise ValueError(f"shape mismatch: {x.value.shape} @ {weight.shape}")
    value = x.value @ weight
    grad = np.einsum('...id,io->...od', x.grad, weight)
    lap = x.lap @ weight
    if bias is not None:
        value = value + bias
    return Jet(value, grad, lap)


def stack(jets: Sequence[Jet], axis: int = -1) -> Jet:
    nd = jets[0].value.ndim + 1
    axis = axis % nd
    return Jet(np.stack([j.value for j in jets], axis=axis),
               np.stack([j.grad for j in jets], axis=axis),
               np.stack([j.lap for j in jets], axis=axis))


def concat(jets: Sequence[Jet], axis: int = -1) -> Jet:
    axis = axis % jets[0].value.ndim
    return Jet(np.concatenate([j.value for j in jets], axis=axis),
               np.concatenate([j.grad for j in jets], axis=axis),
               np.concatenate([j.lap for j in jets], axis=axis))


@dataclass(frozen=True)
class SignedLog:
    """A signed value stored as (sign, log|value|).

    ``sign`` entries are in {-1, 0, +1}; where sign is 0 the represented value
    is exactly zero (a node) and ``logabs`` must not be consumed there.
    ``logabs`` may be a plain array, a Jet, or a tape variable, depending on
    which derivative pass produced it.
    """

    sign: np.ndarray
    logabs: object

    @property
    def valid(self) -> np.ndarray:
        return self.sign != 0

    def __mul__(self, other: "SignedLog") -> "SignedLog":
        return SignedLog(self.sign * other.sign, self.logabs + other.logabs)


def slogdet(a: Jet) -> SignedLog:
    """Sign and log|det| of a stack of square jet matrices (..., n, n).

    The gradient follows d log|det A| = tr(A^-1 dA); the Laplacian adds the
    second-order term -tr((A^-1 d_c A)^2) accumulated over coordinates c.
    Exactly singular (or below the nodal guard) matrices come back with
    sign 0 and zeroed derivatives.
    """
    v = a.value
    if v.shape[-1] != v.shape[-2]:
        raise ValueError(f"slogdet needs square matrices, got {v.shape}")
    n = v.shape[-1]
    dim = a.dim
    batch_shape = v.shape[:-2]
    if n == 0:
        return SignedLog(np.ones(batch_shape),
                         Jet(np.zeros(batch_shape), np.zeros(batch_shape + (dim,)),
                             np.zeros(batch_shape)))

    sign, logabs = np.linalg.slogdet(v)
    with np.errstate(divide="ignore", invalid="ignore"):
        row_scale = np.sum(np.log(np.linalg.norm(v, axis=-1)), axis=-1)
        node = (sign == 0) | ~np.isfinite(logabs) | (logabs - row_scale < NEAR_SINGULAR_LOG)

    safe = v
    if np.any(node):
        safe = np.where(node[..., None, None], np.eye(n), v)
    ainv = np.linalg.inv(safe)

    m = np.einsum('...ij,...jkd->...ikd', ainv, a.grad)
    grad = np.einsum('...iid->...d', m)
    lap = np.einsum('...ij,...ji->...', ainv, a.lap) - np.einsum('...ikd,...kid->...', m, m)

    if np.any(node):
        sign = np.where(node, 0.0, sign)
        logabs = np.where(node, -np.inf, logabs)
        grad = np.where(node[..., None], 0.0, grad)
        lap = np.where(node, 0.0, lap)
    return SignedLog(sign, Jet(logabs, grad, lap))


def _keep_grad(grad: np.ndarray, new_value: np.ndarray) -> np.ndarray:
    # broadcasting a constant into a jet sum may enlarge the value shape
    if grad.shape[:-1] == new_value.shape:
        return grad
    return np.broadcast_to(grad, new_value.shape + (grad.shape[-1],)).copy()
