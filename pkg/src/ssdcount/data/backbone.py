"""Small trainable conv backbone standing in for a pretrained feature extractor."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from ..module import Module, kaiming_uniform, zeros_param
from ..tensor import Tensor, add, center_spatial, conv2d, relu
from .types import FeaturePyramid


@dataclass(frozen=True)
class BackboneConfig:
    width: int = 32
    levels: Tuple[int, ...] = (2, 2, 2)
    frozen: bool = False

    @property
    def channels(self) -> Tuple[int, ...]:
        return tuple(self.width * 2 ** p for p in range(len(self.levels)))

    @property
    def strides(self) -> Tuple[int, ...]:
        return tuple(8 * 2 ** p for p in range(len(self.levels)))

    @property
    def divisor(self) -> int:
        return self.strides[-1]


class ConvLayer(Module):
    def __init__(self, rng, c_in: int, c_out: int, k: int, stride: int, dtype):
        self.weight = kaiming_uniform(rng, (c_out, c_in, k, k), c_in * k * k, dtype)
        self.bias = zeros_param((c_out,), dtype)
        self.stride = stride
        self.pad = k // 2

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class ToyBackbone(Module):
    """Stride-8/16/32... pyramid: a stride-8 stem, then per group a stride-2
    transition and ``levels[p]`` residual 3x3 blocks.  Each block output, minus
    its per-channel spatial mean, is one level.
    """

    def __init__(self, cfg: BackboneConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng([seed, 101])
        c = cfg.width
        c4, c2 = max(c // 4, 1), max(c // 2, 1)
        self.stem = [ConvLayer(rng, 3, c4, 3, 2, dtype), ConvLayer(rng, c4, c2, 3, 2, dtype),
                     ConvLayer(rng, c2, c, 3, 2, dtype)]
        self.transitions = []
        self.blocks = []
        for p, (ch, n) in enumerate(zip(cfg.channels, cfg.levels)):
            if p > 0:
                self.transitions.append(ConvLayer(rng, cfg.channels[p - 1], ch, 3, 2, dtype))
            self.blocks.append([ConvLayer(rng, ch, ch, 3, 1, dtype) for _ in range(n)])
        self.set_frozen(cfg.frozen)

    def set_frozen(self, frozen: bool) -> None:
        for p in self.parameters():
            p.requires_grad = not frozen

    def __call__(self, image: Tensor) -> FeaturePyramid:
        _, h, w = image.shape
        d = self.cfg.divisor
        if h % d or w % d:
            raise ValueError(f"backbone input {h}x{w} not divisible by {d}")
        x = image
        for layer in self.stem:
            x = relu(layer(x))
        groups = []
        for p, blocks in enumerate(self.blocks):
            if p > 0:
                x = relu(self.transitions[p - 1](x))
            levels = []
            for blk in blocks:
                x = relu(add(x, blk(x)))
                # emitted levels are channel-centred so cosine similarity has signed contrast
                levels.append(center_spatial(x))
            groups.append(levels)
        return FeaturePyramid(groups=groups, strides=list(self.cfg.strides))


def pyramid_shapes(cfg: BackboneConfig, h: int, w: int) -> Sequence[Tuple[int, int, int]]:
    return [(c, h // s, w // s) for c, s in zip(cfg.channels, cfg.strides)]
