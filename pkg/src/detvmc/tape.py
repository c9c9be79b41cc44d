"""Minimal reverse-mode autodiff over numpy arrays.

Used exclusively for parameter derivatives of log|psi| (the adjoint pass of
the trainer); electron-coordinate derivatives come from the forward jet
engine instead.  Supports exactly the operations the wave function
evaluation needs: broadcasting arithmetic, the elementwise functions of the
ansatz, matmul, reshape/indexing/reductions, and slogdet.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import SingularEvaluationError


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to `shape`."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * v))


class Var:
    """A node in the reverse-mode graph."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    # defer mixed ndarray-Var arithmetic to the reflected dunders below
    __array_ufunc__ = None

    def __init__(self, value, parents: tuple = (), backward: Callable | None = None):
        value = np.asarray(value)
        if value.dtype not in (np.float32, np.float64):
            value = value.astype(np.float64)
        self.value = value
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward

    def _add_grad(self, g: np.ndarray) -> None:
        g = _unbroadcast(g, self.value.shape)
        self.grad = g if self.grad is None else self.grad + g

    # ---------- arithmetic ----------
    def __add__(self, other):
        if isinstance(other, Var):
            out = Var(self.value + other.value, (self, other),
                      lambda g: (self._add_grad(g), other._add_grad(g)))
        else:
            out = Var(self.value + np.asarray(other), (self,), lambda g: self._add_grad(g))
        return out

    __radd__ = __add__

    def __neg__(self):
        return Var(-self.value, (self,), lambda g: self._add_grad(-g))

    def __sub__(self, other):
        if isinstance(other, Var):
            return Var(self.value - other.value, (self, other),
                       lambda g: (self._add_grad(g), other._add_grad(-g)))
        return self.__add__(-np.asarray(other))

    def __rsub__(self, other):
        return (-self).__add__(other)

    def __mul__(self, other):
        if isinstance(other, Var):
            return Var(self.value * other.value, (self, other),
                       lambda g: (self._add_grad(g * other.value), other._add_grad(g * self.value)))
        c = np.asarray(other)
        return Var(self.value * c, (self,), lambda g: self._add_grad(g * c))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            if np.any(other.value == 0.0):
                raise SingularEvaluationError("tape division by zero")
            inv = 1.0 / other.value
            val = self.value * inv
            return Var(val, (self, other),
                       lambda g: (self._add_grad(g * inv), other._add_grad(-g * val * inv)))
        return self.__mul__(1.0 / np.asarray(other))

    def __rtruediv__(self, other):
        if np.any(self.value == 0.0):
            raise SingularEvaluationError("tape division by zero")
        c = np.asarray(other)
        inv = 1.0 / self.value
        return Var(c * inv, (self,), lambda g: self._add_grad(-g * c * inv * inv))

    def __matmul__(self, other):
        if isinstance(other, Var):
            return Var(self.value @ other.value, (self, other),
                       lambda g: (self._add_grad(g @ np.swapaxes(other.value, -1, -2)),
                                  other._add_grad(np.swapaxes(self.value, -1, -2) @ g)))
        c = np.asarray(other)
        return Var(self.value @ c, (self,),
                   lambda g: self._add_grad(g @ np.swapaxes(c, -1, -2)))

    def __rmatmul__(self, other):
        c = np.asarray(other)
        return Var(c @ self.value, (self,),
                   lambda g: self._add_grad(np.swapaxes(c, -1, -2) @ g))

    # ---------- elementwise functions ----------
    def _unary(self, val: np.ndarray, d1: np.ndarray) -> "Var":
        return Var(val, (self,), lambda g: self._add_grad(g * d1))

    def exp(self):
        e = np.exp(self.value)
        return self._unary(e, e)

    def log(self):
        if np.any(self.value <= 0.0):
            raise SingularEvaluationError("tape log of non-positive value")
        return self._unary(np.log(self.value), 1.0 / self.value)

    def sqrt(self):
        if np.any(self.value <= 0.0):
            raise SingularEvaluationError("tape sqrt of non-positive value")
        s = np.sqrt(self.value)
        return self._unary(s, 0.5 / s)

    def tanh(self):
        t = np.tanh(self.value)
        return self._unary(t, 1.0 - t * t)

    def softplus(self):
        v = self.value
        val = np.log1p(np.exp(-np.abs(v))) + np.maximum(v, 0.0)
        return self._unary(val, _sigmoid(v))

    def silu(self):
        s = _sigmoid(self.value)
        return self._unary(self.value * s, s + self.value * s * (1.0 - s))

    def log_expm1(self):
        v = self.value
        if np.any(v <= 0.0):
            raise SingularEvaluationError("log_expm1 requires positive input")
        val = np.where(v > 33.0, v + np.log1p(-np.exp(-np.minimum(v, 700.0))),
                       np.log(np.expm1(np.minimum(v, 33.0))))
        return self._unary(val, -1.0 / np.expm1(-v))

    # ---------- structure ----------
    def __getitem__(self, key):
        def back(g):
            buf = np.zeros_like(self.value)
            np.add.at(buf, key, g)
            self._add_grad(buf)
        return Var(self.value[key], (self,), back)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.value.shape
        return Var(self.value.reshape(shape), (self,),
                   lambda g: self._add_grad(np.asarray(g).reshape(orig)))

    def sum(self, axis: int):
        axis_ = axis % self.value.ndim
        return Var(self.value.sum(axis=axis_), (self,),
                   lambda g: self._add_grad(
                       np.broadcast_to(np.expand_dims(g, axis_), self.value.shape)))


def stack(vars_: Sequence[Var], axis: int = -1) -> Var:
    axis_ = axis % (vars_[0].value.ndim + 1)

    def back(g):
        pieces = np.moveaxis(np.asarray(g), axis_, 0)
        for v, piece in zip(vars_, pieces):
            v._add_grad(piece)

    return Var(np.stack([v.value for v in vars_], axis=axis_), tuple(vars_), back)


def concat(vars_: Sequence[Var], axis: int = -1) -> Var:
    axis_ = axis % vars_[0].value.ndim
    sizes = [v.value.shape[axis_] for v in vars_]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        g = np.asarray(g)
        for v, lo, hi in zip(vars_, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis_] = slice(lo, hi)
            v._add_grad(g[tuple(idx)])

    return Var(np.concatenate([v.value for v in vars_], axis=axis_), tuple(vars_), back)


def slogdet(a: Var) -> tuple[np.ndarray, Var]:
    """Sign (constant) and log|det| of square matrix stacks (..., n, n)."""
    v = a.value
    sign, logabs = np.linalg.slogdet(v)
    node = (sign == 0) | ~np.isfinite(logabs)
    safe = np.where(node[..., None, None], np.eye(v.shape[-1]), v) if np.any(node) else v
    ainv_t = np.swapaxes(np.linalg.inv(safe), -1, -2)

    def back(g):
        g = np.where(node, 0.0, np.asarray(g))
        a._add_grad(g[..., None, None] * ainv_t)

    out = Var(np.where(node, -np.inf, logabs), (a,), back)
    return np.where(node, 0.0, sign), out


def backward(root: Var, seed: np.ndarray) -> None:
    """Accumulate gradients of (seed . root) into every reachable node's .grad."""
    order: list[Var] = []
    visited: set[int] = set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack_.append((p, False))

    root._add_grad(np.asarray(seed, dtype=np.float64))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
