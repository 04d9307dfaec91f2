"""Tape-free reverse-mode differentiation over numpy arrays.

Each :class:`Tensor` remembers its parents and a closure that pushes its
gradient back to them. :func:`backward` orders the graph topologically and
runs every closure once, so a whole rollout is differentiated in a single
sweep.
"""

from __future__ import annotations

import numpy as np

from ..errors import NonFiniteGradient

SQRT_EPS = 1e-12


class Tensor:
    __slots__ = ("value", "grad", "parents", "_backward", "requires_grad")
    __array_priority__ = 100

    def __init__(self, value, parents=(), backward=None, requires_grad=False):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.parents = parents
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor({self.value!r})"

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        g = _unbroadcast(g, self.value.shape)
        self.grad = g.copy() if self.grad is None else self.grad + g

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: mul(self, -1.0)
    __getitem__ = lambda self, idx: getitem(self, idx)


def param(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    g = np.asarray(g, dtype=float)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        a._accumulate(g)
        b._accumulate(g)

    return Tensor(a.value + b.value, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        a._accumulate(g)
        b._accumulate(-g)

    return Tensor(a.value - b.value, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        a._accumulate(g * b.value)
        b._accumulate(g * a.value)

    return Tensor(a.value * b.value, (a, b), back)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        a._accumulate(g @ np.swapaxes(b.value, -1, -2))
        b._accumulate(np.swapaxes(a.value, -1, -2) @ g)

    return Tensor(a.value @ b.value, (a, b), back)


def affine(x, W, b) -> Tensor:
    """``x @ W.T + b`` with ``W`` shaped ``(out, in)``."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)

    def back(g):
        x._accumulate(g @ W.value)
        W._accumulate(np.swapaxes(g, -1, -2) @ x.value if g.ndim > 1 else np.outer(g, x.value))
        b._accumulate(g)

    return Tensor(x.value @ W.value.T + b.value, (x, W, b), back)


def elu(x) -> Tensor:
    x = as_tensor(x)
    v = x.value
    out = np.where(v > 0, v, np.expm1(np.minimum(v, 0.0)))

    def back(g):
        x._accumulate(g * np.where(v > 0, 1.0, out + 1.0))

    return Tensor(out, (x,), back)


def sqrt(x, eps: float = 0.0) -> Tensor:
    """``sqrt(x + eps)``; ``eps`` keeps the derivative finite at 0."""
    x = as_tensor(x)
    out = np.sqrt(x.value + eps)

    def back(g):
        x._accumulate(g * 0.5 / out)

    return Tensor(out, (x,), back)


def relu(x) -> Tensor:
    """``max(x, 0)`` with subgradient 0 at the kink."""
    x = as_tensor(x)
    mask = x.value > 0

    def back(g):
        x._accumulate(g * mask)

    return Tensor(np.where(mask, x.value, 0.0), (x,), back)


def square(x) -> Tensor:
    x = as_tensor(x)

    def back(g):
        x._accumulate(2.0 * g * x.value)

    return Tensor(x.value**2, (x,), back)


def sum(x, axis=None) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.value.shape

    def back(g):
        if axis is None:
            x._accumulate(np.broadcast_to(g, shape))
        else:
            x._accumulate(np.broadcast_to(np.expand_dims(g, axis), shape))

    return Tensor(x.value.sum(axis=axis), (x,), back)


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.value.size
    return mul(sum(x), 1.0 / n)


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)

    def back(g):
        full = np.zeros_like(x.value)
        np.add.at(full, idx, g)
        x._accumulate(full)

    return Tensor(x.value[idx], (x,), back)


def quadform(g, M) -> Tensor:
    """Row-wise ``g_i M_i g_i^T`` for ``g`` ``(B, d)`` and symmetric ``M`` ``(B, d, d)``."""
    g, M = as_tensor(g), as_tensor(M)
    Mg = np.einsum("bij,bj->bi", M.value, g.value)

    def back(gr):
        g._accumulate(2.0 * gr[:, None] * Mg)
        M._accumulate(gr[:, None, None] * g.value[:, :, None] * g.value[:, None, :])

    return Tensor(np.einsum("bi,bi->b", g.value, Mg), (g, M), back)


def backward(root: Tensor, seed=None):
    """Accumulate ``d root / d leaf`` into ``leaf.grad`` for every leaf."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        stack.extend((p, False) for p in node.parents)
    root.grad = np.ones_like(root.value) if seed is None else np.asarray(seed, dtype=float)
    for node in reversed(order):
        if node.grad is None:
            continue
        if not np.all(np.isfinite(node.grad)):
            raise NonFiniteGradient("non-finite gradient during backward sweep")
        if node._backward is not None:
            node._backward(node.grad)
