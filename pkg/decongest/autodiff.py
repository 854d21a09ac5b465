"""Minimal reverse-mode tape over numpy arrays.

Covers the operations the soft proxy and the predictor loss need: sums and products with
broadcasting, matrix products, softmax / log-softmax, log, reciprocals, clamping and column slicing.
Nodes are recorded in creation order, which is already a topological order of the graph.
"""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

Backward = Callable[[np.ndarray], np.ndarray]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    __slots__ = ("value", "grad", "tape", "parents", "requires_grad")

    def __init__(self, value: np.ndarray, tape: "Tape", requires_grad: bool) -> None:
        self.value = np.asarray(value, dtype=float)
        self.grad: Optional[np.ndarray] = None
        self.tape = tape
        self.parents: list[tuple[Var, Backward]] = []
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __add__(self, other: Var | float | np.ndarray) -> Var:
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Var | float | np.ndarray) -> Var:
        return sub(self, other)

    def __rsub__(self, other: Var | float | np.ndarray) -> Var:
        return sub(other, self)

    def __mul__(self, other: Var | float | np.ndarray) -> Var:
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> Var:
        return mul(self, -1.0)

    def __truediv__(self, other: float) -> Var:
        return mul(self, 1.0 / other)

    def __matmul__(self, other: Var | np.ndarray) -> Var:
        return matmul(self, other)

    def __rmatmul__(self, other: np.ndarray) -> Var:
        return matmul(other, self)


class Tape:
    def __init__(self) -> None:
        self.nodes: list[Var] = []

    def variable(self, value: np.ndarray) -> Var:
        var = Var(value, self, requires_grad=True)
        self.nodes.append(var)
        return var

    def constant(self, value: np.ndarray | float) -> Var:
        return Var(np.asarray(value, dtype=float), self, requires_grad=False)

    def record(self, value: np.ndarray, parents: list[tuple[Var, Backward]]) -> Var:
        live = [(p, fn) for p, fn in parents if p.requires_grad]
        out = Var(value, self, requires_grad=bool(live))
        out.parents = live
        if live:
            self.nodes.append(out)
        return out

    def backward(self, output: Var) -> None:
        if output.value.size != 1:
            raise ValueError("backward needs a scalar output")
        for node in self.nodes:
            node.grad = None
        output.grad = np.ones_like(output.value)
        for node in reversed(self.nodes):
            if node.grad is None:
                continue
            for parent, fn in node.parents:
                contribution = fn(node.grad)
                parent.grad = contribution if parent.grad is None else parent.grad + contribution


def _lift(x: Var | float | np.ndarray, tape: Tape) -> Var:
    return x if isinstance(x, Var) else tape.constant(x)


def _tape_of(*xs: object) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


# --------------------------- Elementwise ---------------------------

def add(a: Var | float | np.ndarray, b: Var | float | np.ndarray) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    return tape.record(
        a.value + b.value,
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(g, b.shape))],
    )


def sub(a: Var | float | np.ndarray, b: Var | float | np.ndarray) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    return tape.record(
        a.value - b.value,
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: -_unbroadcast(g, b.shape))],
    )


def mul(a: Var | float | np.ndarray, b: Var | float | np.ndarray) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    return tape.record(
        a.value * b.value,
        [
            (a, lambda g: _unbroadcast(g * b.value, a.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.shape)),
        ],
    )


def log(a: Var) -> Var:
    return a.tape.record(np.log(a.value), [(a, lambda g: g / a.value)])


def reciprocal(a: Var) -> Var:
    out = 1.0 / a.value
    return a.tape.record(out, [(a, lambda g: -g * out * out)])


def relu(a: Var) -> Var:
    """max(a, 0)."""
    return a.tape.record(np.maximum(a.value, 0.0), [(a, lambda g: g * (a.value > 0.0))])


def clamp_max(a: Var, hi: float) -> Var:
    return a.tape.record(np.minimum(a.value, hi), [(a, lambda g: g * (a.value < hi))])


# --------------------------- Reductions / products ---------------------------

def matmul(a: Var | np.ndarray, b: Var | np.ndarray) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    return tape.record(
        a.value @ b.value,
        [
            (a, lambda g: _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape)),
            (b, lambda g: _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape)),
        ],
    )


def sum(a: Var, axis: Optional[int | tuple[int, ...]] = None) -> Var:  # noqa: A001
    def back(g: np.ndarray) -> np.ndarray:
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).copy()

    return a.tape.record(np.sum(a.value, axis=axis), [(a, back)])


def mean(a: Var, axis: Optional[int | tuple[int, ...]] = None) -> Var:
    total = sum(a, axis)
    count = a.value.size // max(total.value.size, 1)
    return mul(total, 1.0 / count)


# --------------------------- Softmax family ---------------------------

def softmax(a: Var, axis: int = -1) -> Var:
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return a.tape.record(s, [(a, lambda g: s * (g - np.sum(g * s, axis=axis, keepdims=True)))])


def log_softmax(a: Var, axis: int = -1) -> Var:
    z = a.value - a.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return a.tape.record(out, [(a, lambda g: g - s * np.sum(g, axis=axis, keepdims=True))])


# --------------------------- Shape ---------------------------

def reshape(a: Var, shape: tuple[int, ...]) -> Var:
    return a.tape.record(a.value.reshape(shape), [(a, lambda g: g.reshape(a.shape))])


def prepend_column(a: Var, value: float) -> Var:
    """Concatenate a constant column in front of the last axis."""
    pad = np.full(a.shape[:-1] + (1,), value)
    return a.tape.record(np.concatenate([pad, a.value], axis=-1), [(a, lambda g: g[..., 1:])])


def columns(a: Var, start: int, stop: Optional[int] = None) -> Var:
    stop = a.shape[-1] if stop is None else stop

    def back(g: np.ndarray) -> np.ndarray:
        full = np.zeros(a.shape)
        full[..., start:stop] = g
        return full

    return a.tape.record(a.value[..., start:stop], [(a, back)])
