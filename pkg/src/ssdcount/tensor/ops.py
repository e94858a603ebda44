"""Pointwise, reduction, shape and linear-algebra ops.

Binary ops require identical shapes; the only broadcast allowed is a Python
scalar (or 0-d tensor without grad) on one side.
"""

from __future__ import annotations

from numbers import Number
from typing import Optional, Sequence, Union

import numpy as np

from .core import ShapeError, Tensor, as_tensor

Scalar = Union[int, float, np.floating]


def _is_scalar(x) -> bool:
    return isinstance(x, (Number, np.floating, np.integer)) and not isinstance(x, bool)


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    if _is_scalar(b):
        a = as_tensor(a)
        return Tensor._make(a.data + a.dtype.type(b), (a,), lambda g: (g,), "add_scalar")
    if _is_scalar(a):
        return add(b, a)
    _check_same("add", a, b)
    return Tensor._make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    if _is_scalar(b):
        return add(a, -b)
    _check_same("sub", a, b)
    return Tensor._make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def neg(a: Tensor) -> Tensor:
    return Tensor._make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    if _is_scalar(b):
        s = a.dtype.type(b)
        return Tensor._make(a.data * s, (a,), lambda g: (g * s,), "mul_scalar")
    if _is_scalar(a):
        return mul(b, a)
    _check_same("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return (g * bd if a.requires_grad else None,
                g * ad if b.requires_grad else None)

    return Tensor._make(ad * bd, (a, b), backward, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return (g / bd if a.requires_grad else None,
                -g * out / bd if b.requires_grad else None)

    return Tensor._make(out, (a, b), backward, "div")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._make(np.where(mask, x.data, 0).astype(x.dtype), (x,),
                        lambda g: (g * mask,), "relu")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out,), "exp")


def square(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor._make(xd * xd, (x,), lambda g: (2 * g * xd,), "square")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for ndim {x.ndim}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), backward, "softmax")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes must match exactly."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: need >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return Tensor._make(ad @ bd, (a, b), backward, "matmul")


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(x.dtype, copy=True),)

    return Tensor._make(np.asarray(out), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    out = x.data.reshape(shape)
    return Tensor._make(out, (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.transpose(x.data, axes)
    return Tensor._make(out, (x,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(x: Tensor, index) -> Tensor:
    shape, dtype = x.shape, x.dtype
    out = np.array(x.data[index])

    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return Tensor._make(out, (x,), backward, "getitem")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(Ellipsis), type(None))) for i in items)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not xs:
        raise ShapeError("stack of an empty sequence")
    for t in xs[1:]:
        _check_same("stack", xs[0], t)
    out = np.stack([t.data for t in xs], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return Tensor._make(out, tuple(xs), backward, "stack")


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not xs:
        raise ShapeError("concat of an empty sequence")
    out = np.concatenate([t.data for t in xs], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._make(out, tuple(xs), backward, "concat")


def pad2d(x: Tensor, bottom: int, right: int) -> Tensor:
    """Zero-pad the last two axes at the bottom/right edges."""
    if bottom == 0 and right == 0:
        return x
    h, w = x.shape[-2:]
    widths = [(0, 0)] * (x.ndim - 2) + [(0, bottom), (0, right)]
    out = np.pad(x.data, widths)
    return Tensor._make(out, (x,), lambda g: (g[..., :h, :w],), "pad2d")


def l2_normalize(x: Tensor, axis: int, eps: float = 1e-8) -> Tensor:
    """x / max(||x||, eps) along ``axis``."""
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))
    clamped = norm <= eps
    denom = np.where(clamped, eps, norm).astype(x.dtype)
    out = xd / denom

    def backward(g):
        proj = (g * out).sum(axis=axis, keepdims=True)
        grad = (g - np.where(clamped, 0, out * proj)) / denom
        return (grad.astype(x.dtype),)

    return Tensor._make(out, (x,), backward, "l2_normalize")


def scale_rows(x: Tensor, w: Tensor, axis: int) -> Tensor:
    """Multiply ``x`` by a per-index vector ``w`` along ``axis`` (explicit broadcast)."""
    if w.ndim != 1 or w.shape[0] != x.shape[axis]:
        raise ShapeError(f"scale_rows: vector {w.shape} incompatible with axis {axis} of {x.shape}")
    view = [1] * x.ndim
    view[axis] = -1
    wd = w.data.reshape(view)
    other = tuple(i for i in range(x.ndim) if i != axis % x.ndim)

    def backward(g):
        gx = g * wd if x.requires_grad else None
        gw = (g * x.data).sum(axis=other) if w.requires_grad else None
        return gx, gw

    return Tensor._make(x.data * wd, (x, w), backward, "scale_rows")


def add_bias(x: Tensor, b: Tensor, axis: int) -> Tensor:
    """Add a per-index vector ``b`` along ``axis`` (explicit broadcast)."""
    if b.ndim != 1 or b.shape[0] != x.shape[axis]:
        raise ShapeError(f"add_bias: vector {b.shape} incompatible with axis {axis} of {x.shape}")
    view = [1] * x.ndim
    view[axis] = -1
    other = tuple(i for i in range(x.ndim) if i != axis % x.ndim)

    def backward(g):
        return (g, g.sum(axis=other) if b.requires_grad else None)

    return Tensor._make(x.data + b.data.reshape(view), (x, b), backward, "add_bias")
