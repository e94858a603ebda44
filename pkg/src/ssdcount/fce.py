"""Feature cross enhancement: attention-weighted mutual residual enhancement
of query and exemplar features."""

from __future__ import annotations

from typing import Tuple

import numpy as np

from .module import Module, kaiming_uniform, zeros_param
from .tensor import (
    ShapeError,
    Tensor,
    add,
    add_bias,
    matmul,
    mul,
    relu,
    reshape,
    softmax,
    transpose,
)


class Linear(Module):
    """Per-position channel map (a 1x1 convolution) on ``C x N`` inputs."""

    def __init__(self, rng, c_in: int, c_out: int, dtype, zero: bool = False):
        if zero:
            self.weight = zeros_param((c_out, c_in), dtype)
        else:
            self.weight = kaiming_uniform(rng, (c_out, c_in), c_in, dtype)
        self.bias = zeros_param((c_out,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return add_bias(matmul(self.weight, x), self.bias, axis=0)


class MLP(Module):
    def __init__(self, rng, c: int, dtype, hidden: int = None):
        hidden = hidden or c
        self.fc1 = Linear(rng, c, hidden, dtype)
        self.fc2 = Linear(rng, hidden, c, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(relu(self.fc1(x)))


class FCEParams(Module):
    """One parameter set per large layer; ``embed_ratio`` sets C_e / C."""

    def __init__(self, channels: int, rng, dtype=np.float32, embed_ratio: float = 0.5,
                 dual_softmax: bool = False):
        ce = max(int(round(channels * embed_ratio)), 1)
        self.channels, self.embed = channels, ce
        self.dual_softmax = dual_softmax
        self.proj_v = Linear(rng, channels, ce, dtype)
        self.proj_q = Linear(rng, channels, ce, dtype)
        self.proj_k = Linear(rng, channels, ce, dtype)
        self.mlp_q = MLP(rng, channels, dtype)
        self.mlp_s = MLP(rng, channels, dtype)
        self.trans_q = Linear(rng, ce, channels, dtype, zero=True)
        self.trans_s = Linear(rng, ce, channels, dtype, zero=True)


def _flatten(fq: Tensor, fs: Tensor) -> Tuple[Tensor, Tensor]:
    if fq.ndim != 3 or fs.ndim != 4:
        raise ShapeError(f"FCE expects C x H x W query and K x C x h x w exemplars, "
                         f"got {fq.shape} and {fs.shape}")
    c, h, w = fq.shape
    k, cs, eh, ew = fs.shape
    if cs != c:
        raise ShapeError(f"FCE channel mismatch: query {c} vs exemplar {cs}")
    xq = reshape(fq, (c, h * w))
    xs = reshape(transpose(fs, (1, 0, 2, 3)), (c, k * eh * ew))
    return xq, xs


def _logits(xq: Tensor, xs: Tensor, params: FCEParams) -> Tensor:
    q = params.proj_q(xq)
    km = params.proj_k(xs)
    return matmul(transpose(q, (1, 0)), km)


def attention(fq: Tensor, fs: Tensor, params: FCEParams) -> Tensor:
    """Attention ``(H*W) x (K*h*w)``, softmax over the exemplar axis.

    Exemplar columns are ordered exemplar-major (k, y, x).
    """
    xq, xs = _flatten(fq, fs)
    return softmax(_logits(xq, xs, params), axis=-1)


def enhance(fq: Tensor, fs: Tensor, params: FCEParams) -> Tuple[Tensor, Tensor]:
    """Return enhanced (query ``C x H x W``, exemplars ``K x C x h x w``)."""
    xq, xs = _flatten(fq, fs)
    logits = _logits(xq, xs, params)
    a = softmax(logits, axis=-1)
    vq = params.proj_v(xq)
    vs = params.proj_v(xs)
    a_s = softmax(logits, axis=0) if params.dual_softmax else a
    tq = params.trans_q(matmul(vs, transpose(a, (1, 0))))
    ts = params.trans_s(matmul(vq, a_s))
    eq = add(xq, mul(params.mlp_q(xq), tq))
    es = add(xs, mul(params.mlp_s(xs), ts))
    k, c, eh, ew = fs.shape
    eq = reshape(eq, fq.shape)
    es = transpose(reshape(es, (c, k, eh, ew)), (1, 0, 2, 3))
    return eq, es
