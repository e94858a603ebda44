"""Density regression head and exemplar averaging."""

from __future__ import annotations

import numpy as np

from .data.backbone import ConvLayer
from .module import Module
from .tensor import ShapeError, Tensor, mean, relu, stack, upsample_bilinear


class DecoderParams(Module):
    """``n_blocks`` x [3x3 conv, relu, upsample x2] then a 1x1 conv head.

    Channels halve per block (floored at 1).
    """

    def __init__(self, c_in: int, n_blocks: int = 3, seed: int = 0, dtype=np.float32,
                 output_scale: float = 0.01):
        rng = np.random.default_rng([seed, 303])
        self.blocks = []
        c = c_in
        for _ in range(n_blocks):
            nxt = max(c // 2, 1)
            self.blocks.append(ConvLayer(rng, c, nxt, 3, 1, dtype))
            c = nxt
        self.head = ConvLayer(rng, c, 1, 1, 1, dtype)
        # fixed output multiplier: counts start small while head activations stay O(1)
        self.output_scale = output_scale

    @property
    def upscale(self) -> int:
        return 2 ** len(self.blocks)


def decode(m: Tensor, params: DecoderParams, out_hw=None) -> Tensor:
    """``(N x) C x H1 x W1`` -> ``(N x) 1 x H x W`` with ``H = H1 * 2**n_blocks``.

    ``out_hw`` when given must equal that size; anything else is a
    non-power-of-two ratio and raises.
    """
    h1, w1 = m.shape[-2:]
    f = params.upscale
    if out_hw is not None and tuple(out_hw) != (h1 * f, w1 * f):
        raise ShapeError(f"decoder reaches {(h1 * f, w1 * f)} from {(h1, w1)}, "
                         f"cannot produce {tuple(out_hw)}")
    x = m
    for blk in params.blocks:
        x = relu(blk(x))
        x = upsample_bilinear(x, 2 * x.shape[-2], 2 * x.shape[-1])
    return relu(params.head(x)) * params.output_scale


def average_exemplars(maps) -> Tensor:
    """Pointwise mean over the leading ``K`` axis (or over a list of equal-shape maps)."""
    if isinstance(maps, Tensor):
        if maps.shape[0] < 1:
            raise ShapeError("average_exemplars needs K >= 1")
        return mean(maps, axis=0)
    maps = list(maps)
    if not maps:
        raise ShapeError("average_exemplars needs K >= 1")
    shapes = {m.shape for m in maps}
    if len(shapes) != 1:
        raise ShapeError(f"average_exemplars: extent mismatch {sorted(shapes)}")
    return mean(stack(maps, axis=0), axis=0)


def predicted_count(density: Tensor) -> float:
    return float(density.data.sum(dtype=np.float64))


def is_power_of_two_ratio(h: int, h1: int) -> bool:
    if h1 <= 0 or h % h1:
        return False
    r = h // h1
    return r & (r - 1) == 0


def blocks_for_stride(stride: int) -> int:
    if not is_power_of_two_ratio(stride, 1):
        raise ShapeError(f"decoder ratio {stride} is not a power of two")
    return int(np.log2(stride))

