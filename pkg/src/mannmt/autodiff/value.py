"""Differentiable arrays and the reverse-mode sweep over their recorded graph."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ContractViolation

_creation_counter = itertools.count()

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Value:
    """A float64 array that can take part in gradient computation.

    Values produced by an operation remember their inputs only when at least
    one input requires a gradient, so inference under frozen parameters
    builds no graph at all.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_order")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple = ()
        self._backward: Optional[BackwardFn] = None
        self._order = next(_creation_counter)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Value(shape={self.shape}, op={self.op}{flag})"

    # Operator sugar; the implementations live in ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __pow__(self, other):
        from . import ops
        return ops.power(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def make_node(data: np.ndarray, op: str, parents: tuple, backward: BackwardFn) -> Value:
    out = Value.__new__(Value)
    out.data = data
    out.grad = None
    out.op = op
    out._order = next(_creation_counter)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


@dataclass
class Tape:
    """Nodes reachable from a loss, in the order the backward sweep visits them.

    Creation order is a topological order of the graph, so sorting by
    descending creation index visits every node after all of its consumers.
    """

    nodes: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def from_output(cls, output: Value) -> "Tape":
        seen = set()
        nodes = []
        stack = [output]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(p for p in node._parents if p.requires_grad)
        nodes.sort(key=lambda n: n._order, reverse=True)
        return cls(nodes)


def backward(loss: Value) -> Tape:
    """Populate ``.grad`` on every value the scalar ``loss`` depends on.

    Leaf gradients accumulate across calls; interior gradients are reset so a
    second sweep over a shared subgraph does not double count.
    """
    if loss.data.size != 1:
        raise ContractViolation(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractViolation("backward: loss does not depend on any value requiring a gradient")
    tape = Tape.from_output(loss)
    for node in tape.nodes:
        if node._backward is not None:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in tape.nodes:
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g
    return tape
