"""RoIAlign as a precomputed linear sampling operator."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..tensor import ShapeError, Tensor, matmul, reshape, transpose
from ..tensor.core import as_tensor
from .types import ExemplarBox


def roi_weights(box: ExemplarBox, feat_h: int, feat_w: int, out_h: int, out_w: int,
                feat_stride: float, sampling: int = 2) -> np.ndarray:
    """Matrix ``(out_h*out_w) x (feat_h*feat_w)`` mapping a flattened map to bin averages.

    Feature pixel centres sit at integer coordinates (image coordinate / stride - 0.5).
    Each bin averages ``sampling x sampling`` bilinear samples at regular offsets;
    samples beyond one pixel outside the map contribute zero.
    """
    x1 = box.x1 / feat_stride - 0.5
    y1 = box.y1 / feat_stride - 0.5
    bin_w = box.width / feat_stride / out_w
    bin_h = box.height / feat_stride / out_h
    offs = (np.arange(sampling) + 0.5) / sampling
    ys = y1 + (np.arange(out_h)[:, None] + offs[None, :]) * bin_h  # out_h x s
    xs = x1 + (np.arange(out_w)[:, None] + offs[None, :]) * bin_w  # out_w x s
    wy = _axis_weights(ys.reshape(-1), feat_h).reshape(out_h, sampling, feat_h).mean(axis=1)
    wx = _axis_weights(xs.reshape(-1), feat_w).reshape(out_w, sampling, feat_w).mean(axis=1)
    if not wy.any() or not wx.any():
        raise ValueError(f"box {box.as_list()} lies entirely outside the feature map")
    return np.einsum("ia,jb->ijab", wy, wx).reshape(out_h * out_w, feat_h * feat_w)


def _axis_weights(coords: np.ndarray, n: int) -> np.ndarray:
    w = np.zeros((coords.size, n))
    for i, c in enumerate(coords):
        if c < -1.0 or c > n:
            continue
        c = min(max(c, 0.0), n - 1)
        lo = int(np.floor(c))
        hi = min(lo + 1, n - 1)
        lam = c - lo
        w[i, lo] += 1.0 - lam
        w[i, hi] += lam
    return w


def roi_align(feat: Tensor, box: ExemplarBox, out_h: int, out_w: int, feat_stride: float,
              sampling: int = 2) -> Tensor:
    """Pool ``box`` from ``feat`` (``C x Hf x Wf``) into ``C x out_h x out_w``."""
    return roi_align_many(feat, [box], out_h, out_w, feat_stride, sampling)[0]


def roi_align_many(feat: Tensor, boxes: Sequence[ExemplarBox], out_h: int, out_w: int,
                   feat_stride: float, sampling: int = 2) -> Tensor:
    """Batched RoIAlign: returns ``K x C x out_h x out_w``."""
    if feat.ndim != 3:
        raise ShapeError(f"roi_align expects C x H x W features, got {feat.shape}")
    c, fh, fw = feat.shape
    mats = [roi_weights(b, fh, fw, out_h, out_w, feat_stride, sampling) for b in boxes]
    wmat = as_tensor(np.concatenate(mats, axis=0).T.astype(feat.dtype))  # HW x K*oh*ow
    flat = reshape(feat, (c, fh * fw))
    out = reshape(matmul(flat, wmat), (c, len(boxes), out_h, out_w))
    return transpose(out, (1, 0, 2, 3))
