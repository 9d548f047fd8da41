"""Dense n-dimensional tensors with reverse-mode automatic differentiation.

Every differentiable operation records a Node linking its inputs to its
output together with the backward rule; ``backward`` walks the recorded
graph once in reverse topological order and accumulates gradients
additively into every participating tensor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in FLOAT_DTYPES:
        return arr
    return arr.astype(np.float64)


class Tensor:
    """Value array plus an optional gradient accumulator.

    Data is immutable by convention once the tensor participates in a graph;
    only ``grad`` (and optimizer updates on leaf parameters between steps)
    may change. Tensors created with ``requires_grad=True`` hold an all-zero
    gradient from construction, so a tensor that never participates in a
    backward pass reports a zero gradient rather than garbage.
    """

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = (
            np.zeros_like(self.data) if self.requires_grad else None
        )
        self.node: Optional[Node] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        """Same values, cut loose from the graph (shares the data array)."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out.node = None
        return out

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


@dataclass
class Node:
    """One recorded operation: inputs, output and the backward rule.

    ``backward`` maps the gradient at the output to one gradient per input
    (``None`` for inputs that need no gradient). Saved forward values live in
    the closure.
    """

    tag: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Graph:
    """Recorded operations in topological order (inputs precede users)."""

    nodes: list


def register_op(tag, inputs, out_data, backward_fn) -> Tensor:
    """Create the output tensor of an operation and record its node."""
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires)
    if requires:
        out.node = Node(tag, tuple(inputs), out, backward_fn)
    return out


def trace(root: Tensor) -> Graph:
    """Collect the graph below ``root`` in topological order, iteratively."""
    nodes = []
    seen = set()
    stack = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        node = tensor.node
        if node is None or id(node) in seen:
            continue
        if expanded:
            seen.add(id(node))
            nodes.append(node)
        else:
            stack.append((tensor, True))
            for inp in node.inputs:
                if inp.node is not None and id(inp.node) not in seen:
                    stack.append((inp, False))
    return Graph(nodes=nodes)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into every requires_grad tensor below loss."""
    if loss.data.size != 1:
        raise ShapeMismatchError(
            f"backward requires a scalar loss, got shape {tuple(loss.shape)}"
        )
    if not loss.requires_grad:
        return
    graph = trace(loss)
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad = loss.grad + np.ones_like(loss.data)
    for node in reversed(graph.nodes):
        out_grad = node.output.grad
        if out_grad is None:
            continue
        grads = node.backward(out_grad)
        for inp, g in zip(node.inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            if g.shape != inp.data.shape:
                raise ShapeMismatchError(
                    f"{node.tag}: backward produced shape {g.shape} for input {inp.data.shape}"
                )
            if inp.grad is None:
                inp.grad = np.zeros_like(inp.data)
            inp.grad = inp.grad + g


def _check_same_shape(tag, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"{tag}: shapes {a.data.shape} and {b.data.shape} differ")
    if a.data.dtype != b.data.dtype:
        raise ShapeMismatchError(f"{tag}: dtypes {a.data.dtype} and {b.data.dtype} differ")


# -- elementwise arithmetic --------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return register_op("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    return register_op("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    return register_op("mul", (a, b), a.data * b.data, lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return register_op("scale", (a,), a.data * c, lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return register_op("add_scalar", (a,), a.data + float(c), lambda g: (g,))


# -- reductions ---------------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    def bwd(g):
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return register_op("sum", (a,), a.data.sum(), bwd)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def bwd(g):
        return (np.broadcast_to(g / n, a.data.shape).copy(),)

    return register_op("mean", (a,), a.data.mean(), bwd)


# -- elementwise nonlinearities ------------------------------------------------


def absolute(a: Tensor) -> Tensor:
    return register_op("abs", (a,), np.abs(a.data), lambda g: (g * np.sign(a.data),))


def square(a: Tensor) -> Tensor:
    return register_op("square", (a,), a.data * a.data, lambda g: (g * (2.0 * a.data),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return register_op("relu", (a,), a.data * mask, lambda g: (g * mask,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    slope = float(slope)
    factor = np.where(a.data > 0, 1.0, slope).astype(a.data.dtype)
    return register_op("leaky_relu", (a,), a.data * factor, lambda g: (g * factor,))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return register_op("tanh", (a,), t, lambda g: (g * (1.0 - t * t),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only: stable at both tails
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return register_op("sigmoid", (a,), s, lambda g: (g * s * (1.0 - s),))


_ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid", "none")


def activation(a: Tensor, kind: str, slope: float = 0.2) -> Tensor:
    """Dispatch an elementwise nonlinearity by name."""
    if kind == "relu":
        return relu(a)
    if kind == "leaky_relu":
        return leaky_relu(a, slope)
    if kind == "tanh":
        return tanh(a)
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "none":
        return a
    raise ValueError(f"unknown activation kind {kind!r}; expected one of {_ACTIVATIONS}")


def bce_with_logits(logits: Tensor, target: float) -> Tensor:
    """Elementwise binary cross-entropy of sigmoid(logits) against a constant target.

    Uses the overflow-free form max(x,0) - x*t + log(1 + exp(-|x|)).
    """
    t = float(target)
    x = logits.data
    out = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))

    def bwd(g):
        return (g * (_sigmoid(x) - t),)

    return register_op("bce_with_logits", (logits,), out, bwd)
