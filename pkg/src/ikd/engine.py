"""Minimal reverse-mode differentiation over dense float64 arrays.

Every op that touches a tensor with ``requires_grad`` records a node holding
its inputs and a backward rule. ``backward`` traces the nodes reachable from a
scalar root into a :class:`Graph` (topological record order) and replays the
rules in reverse, accumulating into the ``grad`` slot of each leaf.

Intermediate adjoints live only for the duration of one replay, so calling
``backward`` twice without clearing simply doubles every leaf gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ikd.errors import DomainError, ShapeError, UsageError

DTYPE = np.float64


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_node", "name")
    __array_priority__ = 100.0

    def __init__(self, values, requires_grad=False, name=None):
        self.values = np.array(values, dtype=DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._node = None
        self.name = name

    # -- bookkeeping -----------------------------------------------------

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    @property
    def is_leaf(self):
        return self._node is None

    @property
    def graph_handle(self):
        return self._node

    def item(self):
        return float(self.values)

    def numpy(self):
        return self.values.copy()

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return detach(self)

    def backward(self):
        backward(self)

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self):
        return mean(self)

    def tanh(self):
        return tanh(self)

    def log(self):
        return log(self)

    def exp(self):
        return exp(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(op: str, values, inputs: Sequence[Tensor], backward_rule) -> Tensor:
    """Wrap ``values`` as the output of ``op``.

    ``backward_rule(g)`` receives the output adjoint and returns one gradient
    (or ``None``) per input. No node is recorded when no input needs grad.
    """
    out = Tensor(values)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = Node(op, tuple(inputs), backward_rule)
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise ops -------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return make_op(
        "add",
        a.values + b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return make_op(
        "sub",
        a.values - b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    av, bv = a.values, b.values
    return make_op(
        "mul",
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)),
    )


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return make_op("scale", a.values * c, (a,), lambda g: (g * c,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.values)
    return make_op("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.values)
    return make_op("exp", y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    bad = np.argwhere(~(a.values > 0))
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        raise DomainError(f"log of non-positive value {a.values[idx]!r} at index {idx}", index=idx)
    av = a.values
    return make_op("log", np.log(av), (a,), lambda g: (g / av,))


# -- structural ops --------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.values, b.values
    return make_op("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def rule(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_op("sum", a.values.sum(axis=axis), (a,), rule)


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.size
    return make_op("mean", a.values.mean(), (a,), lambda g: (np.full(a.shape, g / n),))


def take(a, index) -> Tensor:
    a = as_tensor(a)

    def rule(g):
        out = np.zeros(a.shape)
        np.add.at(out, index, g)
        return (out,)

    return make_op("take", a.values[index], (a,), rule)


def _check_temperature(temperature):
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature!r}")
    return float(temperature)


def softmax_rows(z, temperature=1.0) -> Tensor:
    """Row-wise softmax of ``z / temperature`` with max-shift for overflow safety."""
    z = as_tensor(z)
    t = _check_temperature(temperature)
    if z.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2-d tensor, got shape {z.shape}")
    s = z.values / t
    e = np.exp(s - s.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)

    def rule(g):
        return ((y * (g - (g * y).sum(axis=1, keepdims=True))) / t,)

    return make_op("softmax_rows", y, (z,), rule)


def log_softmax_rows(z, temperature=1.0) -> Tensor:
    z = as_tensor(z)
    t = _check_temperature(temperature)
    if z.ndim != 2:
        raise ShapeError(f"log_softmax_rows expects a 2-d tensor, got shape {z.shape}")
    s = z.values / t
    shifted = s - s.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    lp = shifted - lse
    y = np.exp(lp)

    def rule(g):
        return ((g - y * g.sum(axis=1, keepdims=True)) / t,)

    return make_op("log_softmax_rows", lp, (z,), rule)


def detach(t: Tensor) -> Tensor:
    """Value-equal copy with no graph link; gradients never flow through it."""
    out = Tensor(t.values.copy(), requires_grad=False)
    out.name = t.name
    return out


# -- reverse pass ----------------------------------------------------------


@dataclass(eq=False)
class Graph:
    """Operations reachable from a root, in an order where inputs precede outputs."""

    records: list = field(default_factory=list)

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        order, seen = [], set()
        stack = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen or t._node is None:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for parent in t._node.inputs:
                if parent._node is not None and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self):
        return len(self.records)

    def reset(self):
        """Drop op records; leaf tensors are left untouched."""
        for t in self.records:
            t._node = None
        self.records.clear()


def _replay(root: Tensor) -> dict:
    """Return ``{id(leaf): (leaf, grad)}`` for every requires_grad leaf under ``root``."""
    if root.size != 1:
        raise UsageError(f"backward needs a scalar root, got shape {root.shape}")
    leaves = {}
    if not root.requires_grad:
        return leaves
    if root._node is None:
        leaves[id(root)] = (root, np.ones(root.shape))
        return leaves
    graph = Graph.trace(root)
    adjoint = {id(root): np.ones(root.shape)}
    for t in reversed(graph.records):
        g = adjoint.pop(id(t), None)
        if g is None:
            continue
        for parent, pg in zip(t._node.inputs, t._node.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._node is None:
                key = id(parent)
                if key in leaves:
                    leaves[key] = (parent, leaves[key][1] + pg)
                else:
                    leaves[key] = (parent, np.asarray(pg, dtype=DTYPE).reshape(parent.shape))
            else:
                key = id(parent)
                adjoint[key] = adjoint[key] + pg if key in adjoint else pg
    return leaves


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    for leaf, g in _replay(root).values():
        if leaf.grad is None:
            leaf.grad = g.copy()
        else:
            leaf.grad = leaf.grad + g


def grad(root: Tensor, wrt: Sequence[Tensor]) -> list:
    """Gradients of ``root`` w.r.t. ``wrt`` without touching any ``.grad`` slot."""
    found = _replay(root)
    return [found[id(t)][1].copy() if id(t) in found else np.zeros(t.shape) for t in wrt]
