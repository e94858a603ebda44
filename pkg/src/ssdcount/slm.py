"""Similarity learning: strided center-pivot 4D convolutions over each group's
similarity stack, top-down fusion, and pooling over the exemplar axes.

4D tensors are laid out ``N x C x H x W x h x w`` (query axes first, exemplar
axes last).  The unbatched ``C x H x W x h x w`` form is accepted everywhere.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Iterator, List, Sequence

import numpy as np

from .module import Module, kaiming_uniform
from .tensor import (
    ShapeError,
    Tensor,
    add,
    conv2d,
    conv_output_size,
    count_multiplies,
    group_norm,
    mean,
    parameter,
    relu,
    reshape,
    transpose,
    upsample_bilinear,
)

GN_GROUPS = 4


@dataclass
class LayerProfile:
    name: str
    flops_cp4d: int
    flops_dense_equiv: int
    flops_analytic: int

    def as_dict(self) -> dict:
        return {"layer": self.name, "flops_cp4d": self.flops_cp4d,
                "flops_dense_equiv": self.flops_dense_equiv,
                "flops_analytic": self.flops_analytic}


@dataclass
class Profiler:
    layers: List[LayerProfile] = field(default_factory=list)

    def as_json(self) -> List[dict]:
        return [l.as_dict() for l in self.layers]


_profilers: List[Profiler] = []


@contextlib.contextmanager
def profile() -> Iterator[Profiler]:
    """Collect measured and analytic multiply counts for every cp4d_conv call."""
    prof = Profiler()
    _profilers.append(prof)
    try:
        yield prof
    finally:
        _profilers.remove(prof)


class CP4DConvLayer(Module):
    """Two k x k banks: one over the query axes, one over the exemplar axes. No bias."""

    def __init__(self, rng, c_in: int, c_out: int, k: int = 3, stride_q: int = 1,
                 stride_s: int = 1, dtype=np.float32, name: str = "cp4d", norm: bool = True):
        if k % 2 == 0:
            raise ShapeError(f"cp4d kernel size must be odd, got {k}")
        fan_in = 2 * c_in * k * k
        self.w_query = kaiming_uniform(rng, (c_out, c_in, k, k), fan_in, dtype)
        self.w_support = kaiming_uniform(rng, (c_out, c_in, k, k), fan_in, dtype)
        self.k, self.stride_q, self.stride_s = k, stride_q, stride_s
        self.name = name
        if norm:
            self.gn_gamma = parameter(np.ones(c_out), dtype=dtype)
            self.gn_beta = parameter(np.zeros(c_out), dtype=dtype)
        else:
            self.gn_gamma = self.gn_beta = None

    @property
    def c_in(self) -> int:
        return self.w_query.shape[1]

    @property
    def c_out(self) -> int:
        return self.w_query.shape[0]


def cp4d_output_shape(shape: Sequence[int], layer: CP4DConvLayer) -> tuple:
    """Output ``(C_out, H', W', h', w')`` for an input ``(C_in, H, W, h, w)``."""
    _, h, w, sh, sw = shape
    pad = layer.k // 2
    oq = [conv_output_size(n, layer.k, layer.stride_q, pad) for n in (h, w)]
    os_ = [conv_output_size(n, layer.k, layer.stride_s, pad) for n in (sh, sw)]
    return (layer.c_out, *oq, *os_)


def cp4d_conv(s: Tensor, layer: CP4DConvLayer) -> Tensor:
    """Center-pivot 4D convolution with zero padding ``k // 2`` on all four axes.

    The query bank slides over (H, W) with the exemplar position pinned at the
    stride-mapped pivot, and the support bank slides over (h, w) with the query
    position pinned; the two partial outputs are summed.
    """
    unbatched = s.ndim == 5
    if s.ndim not in (5, 6):
        raise ShapeError(f"cp4d_conv expects C x H x W x h x w (optionally batched), got {s.shape}")
    x = reshape(s, (1,) + s.shape) if unbatched else s
    n, c, h, w, sh, sw = x.shape
    if c != layer.c_in:
        raise ShapeError(f"cp4d_conv: input has {c} channels, layer expects {layer.c_in}")
    k, sq, ss = layer.k, layer.stride_q, layer.stride_s
    pad = k // 2
    _, o, ho, wo, sho, swo = (n,) + cp4d_output_shape((c, h, w, sh, sw), layer)
    if min(ho, wo, sho, swo) < 1:
        raise ShapeError(f"cp4d_conv: empty output for input {s.shape}")

    with count_multiplies() as counter:
        # query bank: batch over (N, pivot h', pivot w')
        xq = x[:, :, :, :, ::ss, ::ss][:, :, :, :, :sho, :swo]
        xq = reshape(transpose(xq, (0, 4, 5, 1, 2, 3)), (n * sho * swo, c, h, w))
        yq = conv2d(xq, layer.w_query, stride=sq, pad=pad)
        yq = transpose(reshape(yq, (n, sho, swo, o, ho, wo)), (0, 3, 4, 5, 1, 2))
        # support bank: batch over (N, pivot H', pivot W')
        xs = x[:, :, ::sq, ::sq, :, :][:, :, :ho, :wo]
        xs = reshape(transpose(xs, (0, 2, 3, 1, 4, 5)), (n * ho * wo, c, sh, sw))
        ys = conv2d(xs, layer.w_support, stride=ss, pad=pad)
        ys = transpose(reshape(ys, (n, ho, wo, o, sho, swo)), (0, 3, 1, 2, 4, 5))
    out = add(yq, ys)

    outputs = n * o * ho * wo * sho * swo
    for prof in _profilers:
        prof.layers.append(LayerProfile(layer.name, counter.conv_mults,
                                        outputs * c * k ** 4, outputs * c * 2 * k * k))
    return out[0] if unbatched else out


def _block(x: Tensor, layer: CP4DConvLayer) -> Tensor:
    y = cp4d_conv(x, layer)
    if layer.gn_gamma is not None:
        y = group_norm(y, min(GN_GROUPS, layer.c_out), layer.gn_gamma, layer.gn_beta,
                       channel_axis=1 if y.ndim == 6 else 0)
    return relu(y)


class SLMParams(Module):
    """Encoder stacks (one per group) and fusion stacks (one per adjacent group pair)."""

    def __init__(self, level_counts: Sequence[int], widths: Sequence[int] = (8, 16, 32),
                 seed: int = 0, dtype=np.float32, k: int = 3, exemplar_strides=(2, 2, 2)):
        rng = np.random.default_rng([seed, 202])
        self.widths = tuple(widths)
        self.encoders = []
        for p, c_in in enumerate(level_counts):
            stack, prev = [], c_in
            for i, (c_out, st) in enumerate(zip(widths, exemplar_strides)):
                stack.append(CP4DConvLayer(rng, prev, c_out, k, 1, st, dtype,
                                           name=f"encoder{p}.{i}"))
                prev = c_out
            self.encoders.append(stack)
        top = widths[-1]
        self.fusers = [[CP4DConvLayer(rng, top, top, k, 1, 1, dtype, name=f"fuser{p}.{i}")
                        for i in range(3)] for p in range(len(level_counts) - 1)]


def encode_group(s_p: Tensor, stack: Sequence[CP4DConvLayer]) -> Tensor:
    x = s_p
    for layer in stack:
        x = _block(x, layer)
    return x


def _upsample_query_axes(x: Tensor, out_h: int, out_w: int) -> Tensor:
    # (N, C, H, W, h, w) <-> (N, C, h, w, H, W); the permutation is its own inverse
    perm = (0, 1, 4, 5, 2, 3)
    return transpose(upsample_bilinear(transpose(x, perm), out_h, out_w), perm)


def fuse_topdown(encoded: Sequence[Tensor], fusers: Sequence[Sequence[CP4DConvLayer]]) -> Tensor:
    """Top-down fusion from the coarsest group, then mean over the exemplar axes.

    Inputs are batched ``N x C x H_p x W_p x h' x w'``; returns ``N x C x H_1 x W_1``.
    """
    if len(fusers) != len(encoded) - 1:
        raise ShapeError(f"need {len(encoded) - 1} fusion stacks, got {len(fusers)}")
    cur = encoded[-1]
    for p in range(len(encoded) - 2, -1, -1):
        below = encoded[p]
        if below.shape[:2] != cur.shape[:2] or below.shape[4:] != cur.shape[4:]:
            raise ShapeError(f"fusion extent mismatch: {cur.shape} onto {below.shape}")
        up = _upsample_query_axes(cur, below.shape[2], below.shape[3])
        cur = encode_group(add(up, below), fusers[p])
    return mean(cur, axis=(4, 5))


def slm_forward(pyramid: Sequence[Tensor], params: SLMParams) -> Tensor:
    """Batched similarity pyramid (``K x |L_p| x H_p x W_p x h x w`` per group) -> ``K x C x H_1 x W_1``."""
    if len(pyramid) != len(params.encoders):
        raise ShapeError(f"{len(pyramid)} similarity groups for {len(params.encoders)} encoders")
    encoded = [encode_group(s, stack) for s, stack in zip(pyramid, params.encoders)]
    return fuse_topdown(encoded, params.fusers)


def dense_center_pivot_kernel(layer: CP4DConvLayer) -> np.ndarray:
    """Equivalent dense ``C_out x C_in x k x k x k x k`` kernel (query offsets first)."""
    k = layer.k
    c = k // 2
    wq, ws = layer.w_query.data, layer.w_support.data
    dense = np.zeros(wq.shape[:2] + (k, k, k, k), dtype=wq.dtype)
    dense[:, :, :, :, c, c] += wq
    dense[:, :, c, c, :, :] += ws
    return dense
