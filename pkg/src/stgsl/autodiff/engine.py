"""Reverse-mode automatic differentiation on an explicit tape.

Minimal define-by-run engine: every differentiable operation appends a
node to the active Tape, storing the primal value and one vector-Jacobian
closure per parent. ``backward`` replays the tape in reverse and returns a
GradStore keyed by leaf parameter names.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Dict, Optional

import numpy as np


class GradientNaNError(RuntimeError):
    """Raised when a non-finite gradient is produced during backward."""

    def __init__(self, op: str):
        super().__init__(f"non-finite gradient first detected at op '{op}'")
        self.op = op


# opname -> forward callable; populated by @register_op in ops.py.
# The audit test checks every op kind recorded on a tape against this table.
ADJOINT_REGISTRY: Dict[str, Callable] = {}


def register_op(name: str):
    def deco(fn):
        ADJOINT_REGISTRY[name] = fn
        fn.op_name = name
        return fn
    return deco


class Tensor:
    """A node in the computation graph: ndarray value + vjp closures."""

    __slots__ = ("value", "op", "name", "parents", "vjps", "grad")

    def __init__(self, value, op="leaf", name=None, parents=(), vjps=()):
        self.value = np.asarray(value)
        self.op = op
        self.name = name
        self.parents = parents
        self.vjps = vjps
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(op={self.op}{tag}, shape={self.value.shape})"

    # operator sugar; the heavy lifting lives in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)


class Tape:
    """Ordered record of the operations of one loss evaluation."""

    def __init__(self):
        self.nodes = []

    def append(self, node: Tensor):
        self.nodes.append(node)

    def op_kinds(self):
        return {n.op for n in self.nodes}

    @contextlib.contextmanager
    def active(self):
        global _ACTIVE_TAPE
        prev = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        try:
            yield self
        finally:
            _ACTIVE_TAPE = prev


_ACTIVE_TAPE: Optional[Tape] = None


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=float))


def make_node(value, op, parents, vjps) -> Tensor:
    node = Tensor(value, op=op, parents=tuple(parents), vjps=tuple(vjps))
    if _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.append(node)
    return node


def leaf(value, name=None) -> Tensor:
    return Tensor(np.asarray(value), name=name)


# GradStore: parameter name -> gradient array (shape-matched to the leaf).
GradStore = Dict[str, np.ndarray]


def backward(tape: Tape, loss: Tensor) -> GradStore:
    """Reverse accumulation over ``tape`` starting from scalar ``loss``."""
    if loss.value.size != 1:
        raise ValueError("backward expects a scalar loss")
    for node in tape.nodes:
        node.grad = None
        for parent in node.parents:
            parent.grad = None
    loss.grad = np.ones_like(loss.value)

    seen_loss = False
    for node in reversed(tape.nodes):
        if node is loss:
            seen_loss = True
        if not seen_loss or node.grad is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            g = vjp(node.grad)
            if not np.all(np.isfinite(g)):
                raise GradientNaNError(node.op)
            if parent.grad is None:
                parent.grad = np.array(g, copy=True)
            else:
                parent.grad = parent.grad + g

    grads: GradStore = {}
    for node in tape.nodes:
        for parent in node.parents:
            if parent.name is not None and parent.grad is not None:
                grads[parent.name] = parent.grad
    if loss.name is not None and loss.grad is not None:
        grads[loss.name] = loss.grad
    return grads
