"""Small reverse-mode differentiation core over float64 numpy arrays.

A :class:`Node` wraps a value and, after :func:`backward`, the gradient of a
scalar loss with respect to that value.  Operations record their parents and a
closure that maps the output gradient to parent gradients; the graph is walked
in reverse creation order, so every node is visited exactly once.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64

_counter = itertools.count()


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """A forward evaluation produced NaN or Inf."""


def _check_finite(value: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op} produced non-finite values")


class Node:
    __slots__ = ("value", "grad", "parents", "op", "requires_grad", "_backward", "_id")

    def __init__(
        self,
        value,
        parents: Sequence["Node"] = (),
        op: str = "leaf",
        backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
        requires_grad: bool | None = None,
    ):
        self.value = np.asarray(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)
        self.parents = tuple(parents)
        self.op = op
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self._backward = backward
        self._id = next(_counter)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Node(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, Node):
            return hadamard(self, other)
        return scale(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def leaf(value, requires_grad: bool = True) -> Node:
    return Node(value, requires_grad=requires_grad)


def constant(value) -> Node:
    return Node(value, requires_grad=False)


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _make(value, parents, op, backward) -> Node:
    _check_finite(value, op)
    return Node(value, parents, op, backward)


def _same_shape(a: Node, b: Node, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# -- linear algebra ---------------------------------------------------------


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value

    def back(g):
        return g @ bv.T, av.T @ g

    return _make(av @ bv, (a, b), "matmul", back)


def add_bias(a: Node, b: Node) -> Node:
    """``a + b`` with ``b`` (length n) broadcast over the rows of ``a`` (m x n)."""
    if a.value.ndim != 2 or b.value.ndim != 1 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"add_bias: cannot add {b.shape} to rows of {a.shape}")

    def back(g):
        return g, g.sum(axis=0)

    return _make(a.value + b.value, (a, b), "add_bias", back)


def row_scale(a: Node, s: Node) -> Node:
    """Scale row i of ``a`` (m x n) by ``s[i]`` (length m)."""
    if a.value.ndim != 2 or s.value.ndim != 1 or a.shape[0] != s.shape[0]:
        raise DimensionError(f"row_scale: cannot scale rows of {a.shape} by {s.shape}")
    av, sv = a.value, s.value

    def back(g):
        return g * sv[:, None], (g * av).sum(axis=1)

    return _make(av * sv[:, None], (a, s), "row_scale", back)


def column(a: Node, j: int) -> Node:
    if a.value.ndim != 2:
        raise DimensionError(f"column: expected a matrix, got {a.shape}")
    shape = a.shape

    def back(g):
        out = np.zeros(shape, dtype=DTYPE)
        out[:, j] = g
        return (out,)

    return _make(a.value[:, j].copy(), (a,), "column", back)


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    if b.value.ndim == 0:
        return _make(a.value + b.value, (a, b), "add", lambda g: (g, g.sum()))
    if a.value.ndim == 0:
        return _make(a.value + b.value, (a, b), "add", lambda g: (g.sum(), g))
    _same_shape(a, b, "add")
    return _make(a.value + b.value, (a, b), "add", lambda g: (g, g))


def sub(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    if b.value.ndim == 0:
        return _make(a.value - b.value, (a, b), "sub", lambda g: (g, -g.sum()))
    if a.value.ndim == 0:
        return _make(a.value - b.value, (a, b), "sub", lambda g: (g.sum(), -g))
    _same_shape(a, b, "sub")
    return _make(a.value - b.value, (a, b), "sub", lambda g: (g, -g))


def hadamard(a: Node, b: Node) -> Node:
    a, b = _as_node(a), _as_node(b)
    _same_shape(a, b, "hadamard")
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), "hadamard", lambda g: (g * bv, g * av))


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return _make(a.value * c, (a,), "scale", lambda g: (g * c,))


def elementwise(op: str, a, b) -> Node:
    """Dispatch by name: ``add``, ``sub``, ``hadamard`` or ``scale``."""
    if op == "add":
        return add(a, b)
    if op == "sub":
        return sub(a, b)
    if op == "hadamard":
        return hadamard(a, b)
    if op == "scale":
        return scale(a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def relu(a: Node) -> Node:
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), (a,), "relu", lambda g: (g * mask,))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Node) -> Node:
    s = _stable_sigmoid(a.value)
    return _make(s, (a,), "sigmoid", lambda g: (g * s * (1.0 - s),))


def softmax(a: Node) -> Node:
    """Softmax over the last axis (a vector or each row of a matrix)."""
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _make(p, (a,), "softmax", back)


def log(a: Node) -> Node:
    av = a.value
    if np.any(av <= 0):
        raise NonFiniteError("log of a non-positive value")
    return _make(np.log(av), (a,), "log", lambda g: (g / av,))


def clip(a: Node, lo: float, hi: float) -> Node:
    """Clamp to [lo, hi]; clamped entries pass no gradient."""
    inside = (a.value >= lo) & (a.value <= hi)
    return _make(np.clip(a.value, lo, hi), (a,), "clip", lambda g: (g * inside,))


def stop_gradient(a: Node) -> Node:
    """Identity forward; the edge back to ``a`` carries no gradient."""
    return Node(a.value.copy(), (a,), "stop_gradient", None, requires_grad=False)


# -- reductions -------------------------------------------------------------


def reduce_sum(a: Node, axis: int | None = None) -> Node:
    shape = a.shape
    if axis is None:
        return _make(a.value.sum(), (a,), "sum", lambda g: (np.full(shape, g, dtype=DTYPE),))

    def back(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(a.value.sum(axis=axis), (a,), "sum", back)


def reduce_mean(a: Node) -> Node:
    shape, n = a.shape, a.value.size
    return _make(a.value.mean(), (a,), "mean", lambda g: (np.full(shape, g / n, dtype=DTYPE),))


def reduce(op: str, a: Node) -> Node:
    if op == "sum":
        return reduce_sum(a)
    if op == "mean":
        return reduce_mean(a)
    raise ValueError(f"unknown reduction {op!r}")


# -- backward ---------------------------------------------------------------


def topological_order(root: Node) -> list[Node]:
    """Ancestors of ``root`` (inclusive) that carry gradient, by creation order."""
    seen: set[int] = set()
    nodes: list[Node] = []
    stack = [root]
    while stack:
        n = stack.pop()
        if id(n) in seen or not n.requires_grad:
            continue
        seen.add(id(n))
        nodes.append(n)
        stack.extend(n.parents)
    nodes.sort(key=lambda n: n._id)
    return nodes


def backward(loss: Node) -> list[Node]:
    """Accumulate d(loss)/d(node) into ``.grad`` of every contributing node.

    Gradients add onto whatever ``.grad`` already holds; call
    :func:`zero_grad` (or ``node.zero_grad()``) between independent passes.
    Returns the visited nodes in topological order.
    """
    if loss.value.shape != ():
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = topological_order(loss)
    # Upstream gradients for this pass only; .grad accumulates across passes.
    upstream: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=DTYPE)}
    for node in reversed(order):
        g = upstream.pop(id(node), None)
        if g is None:
            continue
        node.grad = node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=DTYPE).reshape(parent.shape)
            key = id(parent)
            upstream[key] = upstream[key] + pg if key in upstream else pg
    return order


def zero_grad(nodes) -> None:
    for n in nodes:
        n.zero_grad()
