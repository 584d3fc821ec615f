"""Tensor and tape: the reverse-mode substrate.

Every differentiable operation produces its output through :func:`record`,
which appends a :class:`Node` to the active :class:`Tape`. Backward replays
the tape in reverse record order, which is a valid reverse topological order
because a node can only consume tensors that already exist.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Optional, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An operation was asked to evaluate outside its domain."""


class TapeError(RuntimeError):
    """Misuse of the tape contract (double backward, non-scalar loss, ...)."""


class NonFiniteError(FloatingPointError):
    """A forward value or gradient became NaN or infinite."""


_state = threading.local()


def _default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


def default_dtype() -> np.dtype:
    return _default_dtype()


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the dtype used for newly created tensors.

    ``precision("float64")`` is the gradient-check mode.
    """
    prev = _default_dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        elif isinstance(data, np.ndarray) and data.dtype.kind == "f":
            arr = data
        else:
            arr = np.asarray(data, dtype=_default_dtype())
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._node: Optional[Node] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name, dtype=dtype)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar; the implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def _raise_item(t: Tensor):
    raise TapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is None:
        dtype = _default_dtype()
    return Tensor(arr.astype(dtype, copy=False), dtype=dtype)


class Node:
    """One executed operation: its inputs, outputs and the vector-Jacobian product."""

    __slots__ = ("op", "inputs", "outputs", "vjp")

    def __init__(self, op: str, inputs: Sequence[Tensor], outputs: Sequence[Tensor],
                 vjp: Callable[[list], Sequence[Optional[np.ndarray]]]):
        self.op = op
        self.inputs = tuple(inputs)
        self.outputs = tuple(outputs)
        self.vjp = vjp


class Tape:
    """Ordered record of executed operations.

    Use as a context manager; operations executed inside the block on tensors
    that require gradients are recorded. ``backward`` may be called once per
    recording; call :meth:`reset` to reuse the object.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def reset(self) -> None:
        self.nodes = []
        self.consumed = False

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise TapeError("backward already ran on this tape; call reset() before reusing it")
        if loss.data.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise TapeError("loss does not depend on any tensor that requires grad")
        if not self.nodes and loss.is_leaf:
            # loss is itself a parameter
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1
            self.consumed = True
            return
        if not self.nodes:
            raise TapeError("tape is empty")
        self.consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        if loss.is_leaf:
            _accumulate_leaf(loss, grads.pop(id(loss)))
        for node in reversed(self.nodes):
            gouts = [grads.pop(id(o), None) for o in node.outputs]
            if all(g is None for g in gouts):
                continue
            gouts = [np.zeros_like(o.data) if g is None else g for o, g in zip(node.outputs, gouts)]
            gins = node.vjp(gouts)
            for inp, g in zip(node.inputs, gins):
                if g is None or not inp.requires_grad:
                    continue
                if inp.is_leaf:
                    _accumulate_leaf(inp, g)
                else:
                    key = id(inp)
                    prev = grads.get(key)
                    grads[key] = g if prev is None else prev + g
        self.nodes = []


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    if g.shape != t.data.shape:
        raise DimensionError(f"gradient shape {g.shape} does not match tensor shape {t.shape}")
    g = g.astype(t.data.dtype, copy=False)
    t.grad = g.copy() if t.grad is None else t.grad + g


def _tape_stack() -> list:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


def active_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording (pushes an inert sentinel)."""
    stack = _tape_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


_check_finite = False


def set_finite_checks(enabled: bool) -> None:
    """Check every op output for NaN/Inf (slow; meant for debugging and tests)."""
    global _check_finite
    _check_finite = bool(enabled)


def record(op: str, inputs: Sequence[Tensor], out_data, vjp) -> Tensor | tuple:
    """Wrap forward results in tensors and record the node if any input needs grad.

    ``out_data`` may be a single array or a tuple of arrays (multi-output op).
    ``vjp`` maps the list of output gradients to one gradient per input
    (``None`` where an input needs none).
    """
    multi = isinstance(out_data, tuple)
    arrays = out_data if multi else (out_data,)
    if _check_finite:
        for a in arrays:
            if not np.all(np.isfinite(a)):
                raise NonFiniteError(f"{op} produced non-finite values")
    needs = any(t.requires_grad for t in inputs)
    tape = active_tape() if needs else None
    outs = tuple(Tensor(a, requires_grad=tape is not None, dtype=a.dtype) for a in arrays)
    if tape is not None:
        node = Node(op, inputs, outs, vjp)
        for o in outs:
            o._node = node
        tape.nodes.append(node)
    return outs if multi else outs[0]


def backward(loss: Tensor) -> None:
    """Run backward on the tape that recorded ``loss``'s graph (the active one)."""
    tape = active_tape()
    if tape is None:
        raise TapeError("no active tape; run the forward pass inside `with Tape() as tape:`")
    tape.backward(loss)
