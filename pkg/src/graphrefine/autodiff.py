"""Reverse-mode automatic differentiation on numpy arrays.

A minimal tape: every operation that touches a gradient-tracked ``Var``
records its parents and a vector-Jacobian closure. ``backward`` walks the
recorded DAG in reverse creation order and accumulates exactly one gradient
array per reachable node. Operations called on plain numpy inputs skip the
tape entirely and return plain numpy, so forward-only code pays nothing.

Only the operations the models actually need are implemented.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

_COUNTER = itertools.count()


class Var:
    """A value in the evaluation DAG plus its gradient slot."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_vjp", "_order")

    # make numpy defer to the reflected operators below instead of
    # broadcasting Var as an object scalar
    __array_ufunc__ = None

    def __init__(self, value, requires_grad: bool = True):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Var, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None
        self._order = next(_COUNTER)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # operator sugar; the free functions do the actual work
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def value_of(x) -> np.ndarray:
    """Raw numpy value of a Var or array-like."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tracked(*xs) -> bool:
    return any(isinstance(x, Var) and x.requires_grad for x in xs)


def _make(value, parents: Sequence, vjp) -> Var:
    # parents stay aligned with the vjp outputs; non-Var entries are skipped
    # at accumulation time
    out = Var(value)
    out._parents = tuple(parents)
    out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the parent's shape."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _accumulate(node: Var, grad: np.ndarray) -> None:
    grad = _unbroadcast(grad, node.value.shape)
    if node.grad is None:
        node.grad = grad.copy()
    else:
        node.grad = node.grad + grad


def backward(root: Var) -> None:
    """Populate ``grad`` on every node reachable from ``root``.

    ``root`` must be scalar (0-d or single element). Gradients are reset on
    the reachable subgraph before accumulation, so each leaf ends up with
    exactly one gradient per call.
    """
    if root.value.size != 1:
        raise ValueError("backward root must be a scalar")
    # iterative reachability; creation order is a valid topological order
    seen: dict[int, Var] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen[id(node)] = node
        stack.extend(p for p in node._parents if isinstance(p, Var))
    nodes = sorted(seen.values(), key=lambda v: v._order, reverse=True)
    for node in nodes:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in nodes:
        if node._vjp is None or node.grad is None:
            continue
        for parent, grad in zip(node._parents, node._vjp(node.grad)):
            if isinstance(parent, Var) and parent.requires_grad and grad is not None:
                _accumulate(parent, grad)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    if not _tracked(a, b):
        return value_of(a) + value_of(b)
    av, bv = value_of(a), value_of(b)
    return _make(av + bv, (a, b), lambda g: (g, g))


def sub(a, b):
    if not _tracked(a, b):
        return value_of(a) - value_of(b)
    av, bv = value_of(a), value_of(b)
    return _make(av - bv, (a, b), lambda g: (g, -g))


def mul(a, b):
    if not _tracked(a, b):
        return value_of(a) * value_of(b)
    av, bv = value_of(a), value_of(b)
    return _make(av * bv, (a, b), lambda g: (g * bv, g * av))


def div(a, b):
    if not _tracked(a, b):
        return value_of(a) / value_of(b)
    av, bv = value_of(a), value_of(b)
    return _make(av / bv, (a, b), lambda g: (g / bv, -g * av / (bv * bv)))


def square(a):
    return mul(a, a)


def sqrt(a):
    if not _tracked(a):
        return np.sqrt(value_of(a))
    out = np.sqrt(value_of(a))
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def exp(a):
    if not _tracked(a):
        return np.exp(value_of(a))
    out = np.exp(value_of(a))
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    if not _tracked(a):
        return np.log(value_of(a))
    av = value_of(a)
    return _make(np.log(av), (a,), lambda g: (g / av,))


def sigmoid(a):
    av = value_of(a)
    # stable evaluation on both tails
    out = np.where(av >= 0, 1.0 / (1.0 + np.exp(-np.abs(av))),
                   np.exp(-np.abs(av)) / (1.0 + np.exp(-np.abs(av))))
    if not _tracked(a):
        return out
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a):
    av = value_of(a)
    if not _tracked(a):
        return np.maximum(av, 0.0)
    mask = av > 0
    return _make(av * mask, (a,), lambda g: (g * mask,))


def clip(a, lo: float, hi: float):
    """Clamp values; gradient is zero outside [lo, hi]."""
    av = value_of(a)
    if not _tracked(a):
        return np.clip(av, lo, hi)
    mask = (av >= lo) & (av <= hi)
    return _make(np.clip(av, lo, hi), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions and shape


def sum_(a, axis=None, keepdims: bool = False):
    av = value_of(a)
    if not _tracked(a):
        return av.sum(axis=axis, keepdims=keepdims)
    out = av.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, av.shape),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, av.shape),)

    return _make(out, (a,), vjp)


def mean(a, axis=None, keepdims: bool = False):
    av = value_of(a)
    n = av.size if axis is None else av.shape[axis]
    return div(sum_(a, axis=axis, keepdims=keepdims), float(n))


def reshape(a, shape):
    av = value_of(a)
    if not _tracked(a):
        return av.reshape(shape)
    old = av.shape
    return _make(av.reshape(shape), (a,), lambda g: (g.reshape(old),))


def slice_1d(a, start: int, stop: int):
    """Contiguous slice of a 1-d array."""
    av = value_of(a)
    if not _tracked(a):
        return av[start:stop]

    def vjp(g):
        full = np.zeros_like(av)
        full[start:stop] = g
        return (full,)

    return _make(av[start:stop], (a,), vjp)


def concat(parts, axis: int = 1):
    vals = [value_of(p) for p in parts]
    if not _tracked(*parts):
        return np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate(vals, axis=axis), tuple(parts), vjp)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    if not _tracked(a, b):
        return value_of(a) @ value_of(b)
    av, bv = value_of(a), value_of(b)
    out = av @ bv

    def vjp(g):
        if av.ndim == 2 and bv.ndim == 2:
            return (g @ bv.T, av.T @ g)
        if av.ndim == 2 and bv.ndim == 1:
            return (np.outer(g, bv), av.T @ g)
        if av.ndim == 1 and bv.ndim == 2:
            return (g @ bv.T, np.outer(av, g))
        # 1-d dot product
        return (g * bv, g * av)

    return _make(out, (a, b), vjp)


# ---------------------------------------------------------------------------
# gather / scatter


def gather(a, idx):
    """Select rows (2-d) or elements (1-d) by integer index array."""
    idx = np.asarray(idx)
    av = value_of(a)
    if not _tracked(a):
        return av[idx]

    def vjp(g):
        full = np.zeros_like(av)
        np.add.at(full, idx, g)
        return (full,)

    return _make(av[idx], (a,), vjp)


def segment_sum(a, segment_ids, num_segments: int, canonical: bool = False):
    """Sum rows (or scalars) of ``a`` into ``num_segments`` buckets.

    With ``canonical=True`` the summands inside each bucket are added in an
    order determined by their values, not their positions, so the result is
    bit-identical under any relabeling of the input rows.
    """
    segment_ids = np.asarray(segment_ids)
    av = value_of(a)
    if canonical:
        if av.ndim == 1:
            order = np.lexsort((av, segment_ids))
        else:
            keys = tuple(av[:, c] for c in range(av.shape[1] - 1, -1, -1))
            order = np.lexsort(keys + (segment_ids,))
    else:
        order = None

    def compute(values):
        shape = (num_segments,) + values.shape[1:]
        out = np.zeros(shape, dtype=np.float64)
        if order is not None:
            np.add.at(out, segment_ids[order], values[order])
        else:
            np.add.at(out, segment_ids, values)
        return out

    if not _tracked(a):
        return compute(av)

    def vjp(g):
        return (g[segment_ids],)

    return _make(compute(av), (a,), vjp)
