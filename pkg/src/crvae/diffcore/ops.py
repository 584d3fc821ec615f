"""Elementwise, reduction and shape operators.

Binary ops broadcast numpy-style; their gradients are summed back to the
operand shapes. Reductions use numpy's fixed pairwise order, so repeated runs
are bitwise reproducible.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import DimensionError, DomainError, NonFiniteError, Tensor, record


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x, dtype=dtype)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _lift(b, a)
    b = _lift(b)
    return _lift(a, b), b


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("add", a, b)

    def vjp(g):
        return unbroadcast(g[0], a.shape), unbroadcast(g[0], b.shape)

    return record("add", (a, b), a.data + b.data, vjp)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("sub", a, b)

    def vjp(g):
        return unbroadcast(g[0], a.shape), unbroadcast(-g[0], b.shape)

    return record("sub", (a, b), a.data - b.data, vjp)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("mul", a, b)

    def vjp(g):
        ga = unbroadcast(g[0] * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g[0] * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record("mul", (a, b), a.data * b.data, vjp)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("div", a, b)
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    out = a.data / b.data

    def vjp(g):
        ga = unbroadcast(g[0] / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g[0] * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record("div", (a, b), out, vjp)


def neg(x: Tensor) -> Tensor:
    return record("neg", (x,), -x.data, lambda g: (-g[0],))


def scale(x: Tensor, k: float) -> Tensor:
    k = x.dtype.type(k)
    return record("scale", (x,), x.data * k, lambda g: (g[0] * k,))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("exp overflowed")
    return record("exp", (x,), out, lambda g: (g[0] * out,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise DomainError("log of non-positive value")
    return record("log", (x,), np.log(x.data), lambda g: (g[0] / x.data,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return record("tanh", (x,), out, lambda g: (g[0] * (1 - out * out),))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # stable for large |v|: never exponentiates a positive number
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1 / (1 + e), e / (1 + e)).astype(v.dtype, copy=False)


def logistic(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return record("logistic", (x,), out, lambda g: (g[0] * out * (1 - out),))


def log_sigmoid(x: Tensor) -> Tensor:
    """log(logistic(x)) without cancellation: min(x, 0) - log1p(exp(-|x|))."""
    v = x.data
    out = np.minimum(v, 0) - np.log1p(np.exp(-np.abs(v)))
    return record("log_sigmoid", (x,), out, lambda g: (g[0] * _sigmoid(-v),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record("relu", (x,), np.where(mask, x.data, 0).astype(x.dtype), lambda g: (g[0] * mask,))


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    s = x.dtype.type(slope)
    factor = np.where(x.data > 0, x.dtype.type(1), s)
    return record("leaky_relu", (x,), x.data * factor, lambda g: (g[0] * factor,))


def square(x: Tensor) -> Tensor:
    return record("square", (x,), x.data * x.data, lambda g: (2 * g[0] * x.data,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only where the input was inside the range."""
    inside = (x.data >= lo) & (x.data <= hi)
    return record("clamp", (x,), np.clip(x.data, lo, hi), lambda g: (g[0] * inside,))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)
    out = np.asarray(out, dtype=x.dtype)

    def vjp(g):
        gg = g[0]
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, x.shape).copy(),)

    return record("sum", (x,), out, vjp)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return record("reshape", (x,), out, lambda g: (g[0].reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return record("transpose", (x,), np.ascontiguousarray(x.data.transpose(axes)),
                  lambda g: (np.ascontiguousarray(g[0].transpose(inv)),))


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """``x[..., start:stop, ...]`` along ``axis``."""
    if not 0 <= start <= stop <= x.shape[axis]:
        raise DimensionError(f"slice [{start}:{stop}) out of range for axis {axis} of size {x.shape[axis]}")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def vjp(g):
        full = np.zeros_like(x.data)
        full[index] = g[0]
        return (full,)

    return record("slice", (x,), np.ascontiguousarray(x.data[index]), vjp)


def split(x: Tensor, parts: int, axis: int = 1) -> list[Tensor]:
    size = x.shape[axis]
    if parts <= 0 or size % parts:
        raise DimensionError(f"cannot split axis {axis} of size {size} into {parts} equal parts")
    step = size // parts
    return [slice_axis(x, axis, k * step, (k + 1) * step) for k in range(parts)]


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = list(xs)
    if not xs:
        raise DimensionError("concat of an empty list")
    ref = xs[0].shape
    for t in xs[1:]:
        if t.ndim != len(ref) or any(a != b for k, (a, b) in enumerate(zip(t.shape, ref)) if k != axis % len(ref)):
            raise DimensionError(f"concat: shape {t.shape} incompatible with {ref} along axis {axis}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in xs])

    def vjp(g):
        out = []
        for k in range(len(xs)):
            index = [slice(None)] * g[0].ndim
            index[axis] = slice(bounds[k], bounds[k + 1])
            out.append(np.ascontiguousarray(g[0][tuple(index)]))
        return out

    return record("concat", xs, np.concatenate([t.data for t in xs], axis=axis), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned (axis 1 vs axis 0)")

    def vjp(g):
        ga = g[0] @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g[0] if b.requires_grad else None
        return ga, gb

    return record("matmul", (a, b), a.data @ b.data, vjp)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with weight laid out as [in, out]."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def stop_gradient(x: Tensor) -> Tensor:
    return Tensor(x.data, dtype=x.dtype)
