"""Convolution, resampling and normalization ops with hand-written backward passes."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import ShapeError, Tensor
from . import ops


@dataclass
class MultiplyCounter:
    """Tallies scalar multiplies performed by conv2d while active."""

    conv_mults: int = 0
    records: List[Tuple[str, int]] = field(default_factory=list)

    def add(self, tag: str, mults: int) -> None:
        self.conv_mults += mults
        self.records.append((tag, mults))


_counters: List[MultiplyCounter] = []


@contextlib.contextmanager
def count_multiplies() -> Iterator[MultiplyCounter]:
    counter = MultiplyCounter()
    _counters.append(counter)
    try:
        yield counter
    finally:
        _counters.remove(counter)


def _record(tag: str, mults: int) -> None:
    for c in _counters:
        c.add(tag, mults)


def conv_output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           pad: int = 0) -> Tensor:
    """2D cross-correlation with zero padding.

    ``x`` is ``C_in x H x W`` or batched ``N x C_in x H x W``; ``w`` is
    ``C_out x C_in x k x k`` with ``k`` odd.
    """
    unbatched = x.ndim == 3
    if x.ndim not in (3, 4) or w.ndim != 4:
        raise ShapeError(f"conv2d: bad ranks x={x.shape} w={w.shape}")
    xd = x.data[None] if unbatched else x.data
    n, c, h, wd = xd.shape
    o, ci, k, k2 = w.shape
    if ci != c or k != k2:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    if k % 2 == 0:
        raise ShapeError(f"conv2d: kernel size must be odd, got {k}")
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d: invalid stride={stride} pad={pad}")
    ho = conv_output_size(h, k, stride, pad)
    wo = conv_output_size(wd, k, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: empty output for input {x.shape}, k={k}, pad={pad}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({o},)")
    _record("conv2d", n * ho * wo * o * c * k * k)

    wdat = w.data
    if k == 1 and stride == 1 and pad == 0:
        cols = None
        xflat = xd.reshape(n, c, h * wd)
        out = np.matmul(wdat.reshape(o, c), xflat).reshape(n, o, h, wd)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
        # im2col: N*ho*wo x C*k*k
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)
        out = (cols @ wdat.reshape(o, c * k * k).T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)
    if unbatched:
        out = out[0]

    def backward(g):
        gb = g if not unbatched else g[None]
        gx = gw = gbias = None
        if bias is not None and bias.requires_grad:
            gbias = gb.sum(axis=(0, 2, 3))
        if k == 1 and stride == 1 and pad == 0:
            gflat = gb.reshape(n, o, h * wd)
            if w.requires_grad:
                gw = np.einsum("nop,ncp->oc", gflat, xflat).reshape(o, c, 1, 1)
            if x.requires_grad:
                gx = np.matmul(wdat.reshape(o, c).T, gflat).reshape(n, c, h, wd)
        else:
            gmat = np.ascontiguousarray(gb.transpose(0, 2, 3, 1)).reshape(n * ho * wo, o)
            if w.requires_grad:
                gw = (gmat.T @ cols).reshape(o, c, k, k)
            if x.requires_grad:
                dcols = (gmat @ wdat.reshape(o, c * k * k)).reshape(n, ho, wo, c, k, k)
                dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=xd.dtype)
                for i in range(k):
                    for j in range(k):
                        dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                            dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                gx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
        if gx is not None and unbatched:
            gx = gx[0]
        return gx, gw, gbias

    parents = (x, w) if bias is None else (x, w, bias)
    return Tensor._make(out.astype(xd.dtype, copy=False), parents, backward, "conv2d")


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Row i holds the half-pixel-centre bilinear weights for output index i."""
    if n_out < 1 or n_in < 1:
        raise ShapeError(f"bilinear: zero extent (in={n_in}, out={n_out})")
    mat = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        mat[i, i0] += 1.0 - lam
        mat[i, i1] += lam
    return mat


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of the last two axes (half-pixel centres, edge clamping)."""
    if x.ndim < 2:
        raise ShapeError(f"upsample_bilinear: need >=2-d input, got {x.shape}")
    h, w = x.shape[-2:]
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"upsample_bilinear: zero target extent ({out_h}, {out_w})")
    if out_h < h or out_w < w:
        raise ShapeError(f"upsample_bilinear: target ({out_h}, {out_w}) smaller than ({h}, {w})")
    if (out_h, out_w) == (h, w):
        return x
    ry = bilinear_matrix(h, out_h, x.dtype)
    rx = bilinear_matrix(w, out_w, x.dtype)
    out = np.matmul(ry, np.matmul(x.data, rx.T))

    def backward(g):
        return (np.matmul(ry.T, np.matmul(g, rx)),)

    return Tensor._make(out, (x,), backward, "upsample_bilinear")


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5,
               channel_axis: int = 0) -> Tensor:
    """Normalise each channel group over (channels in group x all trailing positions).

    Axes before ``channel_axis`` are treated as independent batch entries.
    """
    c = x.shape[channel_axis]
    if groups < 1 or c % groups:
        raise ShapeError(f"group_norm: {c} channels not divisible into {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"group_norm: affine shapes {gamma.shape}, {beta.shape} != ({c},)")
    lead = x.shape[:channel_axis]
    b = int(np.prod(lead)) if lead else 1
    spatial = int(np.prod(x.shape[channel_axis + 1:]))
    xr = x.data.reshape(b, groups, c // groups, spatial)
    mu = xr.mean(axis=(2, 3), keepdims=True)
    dev = xr - mu
    var = (dev * dev).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = dev * inv
    gview = gamma.data.reshape(1, groups, c // groups, 1)
    bview = beta.data.reshape(1, groups, c // groups, 1)
    out = (xhat * gview + bview).reshape(x.shape)

    def backward(g):
        gr = g.reshape(b, groups, c // groups, spatial)
        ggamma = (gr * xhat).sum(axis=(0, 3)).reshape(c) if gamma.requires_grad else None
        gbeta = gr.sum(axis=(0, 3)).reshape(c) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = gr * gview
            m1 = dxhat.mean(axis=(2, 3), keepdims=True)
            m2 = (dxhat * xhat).mean(axis=(2, 3), keepdims=True)
            gx = (inv * (dxhat - m1 - xhat * m2)).reshape(x.shape)
        return gx, ggamma, gbeta

    return Tensor._make(out.astype(x.dtype, copy=False), (x, gamma, beta), backward,
                        "group_norm")


def sum_pool2d(x: Tensor, stride: int) -> Tensor:
    """Count-preserving sum pooling of the last two axes (zero-pads ragged edges)."""
    if stride == 1:
        return x
    h, w = x.shape[-2:]
    ph, pw = -h % stride, -w % stride
    xp = ops.pad2d(x, ph, pw)
    hh, ww = (h + ph) // stride, (w + pw) // stride
    lead = x.shape[:-2]
    r = ops.reshape(xp, lead + (hh, stride, ww, stride))
    return ops.sum(r, axis=(-3, -1))


def center_spatial(x: Tensor) -> Tensor:
    """Subtract each channel's mean over the last two axes."""
    mu = x.data.mean(axis=(-2, -1), keepdims=True)

    def backward(g):
        return (g - g.mean(axis=(-2, -1), keepdims=True),)

    return Tensor._make((x.data - mu).astype(x.dtype, copy=False), (x,), backward,
                        "center_spatial")
