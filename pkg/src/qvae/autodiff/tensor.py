"""Reverse-mode differentiation over dense float64 numpy arrays.

Every operation returns a new :class:`Tensor` holding its value, its parent
tensors and a closure mapping the output cotangent to parent cotangents.
:meth:`Tensor.backward` walks the graph in reverse topological order and
accumulates gradients into leaf tensors created with ``requires_grad=True``.

Leaf gradients must be cleared (``grad = None``) between backward passes;
a second pass over a leaf that still holds a gradient raises
:class:`~qvae.errors.GradientStateError`.
"""
from __future__ import annotations

import os

import numpy as np

from ..errors import DimensionError, DomainError, GradientStateError

# Set QVAE_CHECK_FINITE=1 to assert finiteness of every forward value.
CHECK_FINITE = os.environ.get("QVAE_CHECK_FINITE", "") not in ("", "0")

PRIMITIVES = (
    "add", "subtract", "multiply", "matmul", "exp", "log", "expm1",
    "negative", "sum", "mean", "square", "sigmoid", "clamp", "add_bias",
    "reshape", "swish", "layer_norm", "stop_gradient",
)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the differentiation graph."""

    __slots__ = ("value", "grad", "requires_grad", "op", "_parents", "_vjp", "name")
    __array_priority__ = 100

    def __init__(self, value, requires_grad=False, name=None, *, _parents=(), _vjp=None, op="leaf"):
        value = np.asarray(value, dtype=np.float64)
        if CHECK_FINITE and not np.all(np.isfinite(value)):
            raise DomainError(f"non-finite value produced by {op}")
        self.value = value
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = _parents
        self._vjp = _vjp
        self.name = name

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, op={self.op})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def is_leaf(self):
        return not self._parents

    def item(self):
        return float(self.value.item())

    def numpy(self):
        return self.value

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not a primitive")
        return multiply(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return negative(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, vjp, op):
    parents = tuple(parents)
    if not any(p.requires_grad for p in parents):
        return Tensor(value, op=op)
    return Tensor(value, requires_grad=True, _parents=parents, _vjp=vjp, op=op)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root):
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    ``root`` must hold a single element. Reachable leaves that received no
    contribution get a zero gradient.
    """
    if root.value.size != 1:
        raise DimensionError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = _topological_order(root)
    leaves = [n for n in order if n.is_leaf]
    stale = [n for n in leaves if n.grad is not None]
    if stale:
        names = ", ".join(str(n.name) for n in stale[:3])
        raise GradientStateError(
            f"leaf gradients not reset before backward ({names}); "
            "clear them with ParameterStore.zero_grad() or an optimizer step")
    cotangents = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = cotangents.pop(id(node), None)
        if node.is_leaf:
            node.grad = np.zeros_like(node.value) if g is None else g
            continue
        if g is None:
            continue
        parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in cotangents:
                cotangents[key] = cotangents[key] + pg
            else:
                cotangents[key] = pg


# ---- primitives -------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        value = a.value + b.value
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return _make(value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def subtract(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        value = a.value - b.value
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return _make(value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "subtract")


def multiply(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        value = a.value * b.value
    except ValueError as exc:
        raise DimensionError(str(exc)) from None

    def vjp(g):
        ga = _unbroadcast(g * b.value, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.value, b.shape) if b.requires_grad else None
        return ga, gb
    return _make(value, (a, b), vjp, "multiply")


def matmul(a, b):
    """Product of 2-D arrays (or a 2-D array and a vector)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} are incompatible")
    value = a.value @ b.value

    def vjp(g):
        if b.ndim == 1:
            ga = np.outer(g, b.value) if a.requires_grad else None
            gb = a.value.T @ g if b.requires_grad else None
        else:
            ga = g @ b.value.T if a.requires_grad else None
            gb = a.value.T @ g if b.requires_grad else None
        return ga, gb
    return _make(value, (a, b), vjp, "matmul")


def exp(a):
    a = as_tensor(a)
    value = np.exp(a.value)
    return _make(value, (a,), lambda g: (g * value,), "exp")


def log(a):
    a = as_tensor(a)
    if np.any(a.value <= 0.0):
        raise DomainError("log of a non-positive value")
    return _make(np.log(a.value), (a,), lambda g: (g / a.value,), "log")


def expm1(a):
    a = as_tensor(a)
    value = np.expm1(a.value)
    return _make(value, (a,), lambda g: (g * (value + 1.0),), "expm1")


def negative(a):
    a = as_tensor(a)
    return _make(-a.value, (a,), lambda g: (-g,), "negative")


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    value = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _make(value, (a,), vjp, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    value = a.value.mean(axis=axis, keepdims=keepdims)
    count = a.value.size // max(value.size, 1)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)
    return _make(value, (a,), vjp, "mean")


def square(a):
    a = as_tensor(a)
    return _make(a.value * a.value, (a,), lambda g: (2.0 * a.value * g,), "square")


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = as_tensor(a)
    s = _sigmoid(a.value)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def clamp(a, lo=None, hi=None):
    """Clip to ``[lo, hi]``; the gradient is zero outside the bounds."""
    a = as_tensor(a)
    value = np.clip(a.value, lo, hi)
    inside = np.ones(a.shape, dtype=bool)
    if lo is not None:
        inside &= a.value >= lo
    if hi is not None:
        inside &= a.value <= hi
    return _make(value, (a,), lambda g: (g * inside,), "clamp")


def add_bias(x, b):
    """``x`` of shape ``(n, k)`` plus a bias row of shape ``(k,)``."""
    x, b = as_tensor(x), as_tensor(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"bias shape {b.shape} does not match {x.shape}")
    return _make(x.value + b.value, (x, b),
                 lambda g: (g, _unbroadcast(g, b.shape)), "add_bias")


def reshape(a, shape):
    a = as_tensor(a)
    try:
        value = a.value.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return _make(value, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def swish(a):
    """``x * sigmoid(x)`` with unit slope."""
    a = as_tensor(a)
    s = _sigmoid(a.value)
    value = a.value * s
    return _make(value, (a,), lambda g: (g * (s + value * (1.0 - s)),), "swish")


def layer_norm(x, gain, bias, epsilon=1e-5):
    """Normalize each row of ``x`` over its last axis, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    n = x.shape[-1]
    mu = x.value.mean(axis=-1, keepdims=True)
    centered = x.value - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = centered * inv_std
    value = xhat * gain.value + bias.value

    def vjp(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gain.value
            gx = inv_std / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                                - xhat * np.sum(dxhat * xhat, axis=-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)
    return _make(value, (x, gain, bias), vjp, "layer_norm")


def stop_gradient(a):
    """Same value, no gradient through this edge."""
    a = as_tensor(a)
    return Tensor(a.value, op="stop_gradient")
