"""Point-to-point 4D cosine similarity between query and exemplar feature maps."""

from __future__ import annotations

from typing import List, Optional, Sequence

from .tensor import (
    ShapeError,
    Tensor,
    l2_normalize,
    matmul,
    relu,
    reshape,
    stack,
    transpose,
)

NORM_EPS = 1e-8


def cosine_similarity_4d(eq: Tensor, es_k: Tensor, eps: float = NORM_EPS) -> Tensor:
    """``C x H x W`` query vs ``C x h x w`` exemplar -> ``H x W x h x w`` in [0, 1]."""
    if es_k.ndim != 3:
        raise ShapeError(f"exemplar features must be C x h x w, got {es_k.shape}")
    return cosine_similarity_batch(eq, reshape(es_k, (1,) + es_k.shape), eps)[0]


def cosine_similarity_batch(eq: Tensor, es: Tensor, eps: float = NORM_EPS) -> Tensor:
    """``C x H x W`` query vs ``K x C x h x w`` exemplars -> ``K x H x W x h x w``."""
    if eq.ndim != 3 or es.ndim != 4 or eq.shape[0] != es.shape[1]:
        raise ShapeError(f"similarity: incompatible shapes {eq.shape} and {es.shape}")
    c, h, w = eq.shape
    k, _, eh, ew = es.shape
    qn = l2_normalize(reshape(eq, (c, h * w)), axis=0, eps=eps)
    sn = l2_normalize(reshape(transpose(es, (1, 0, 2, 3)), (c, k * eh * ew)), axis=0, eps=eps)
    s = relu(matmul(transpose(qn, (1, 0)), sn))
    return transpose(reshape(s, (h, w, k, eh, ew)), (2, 0, 1, 3, 4))


def build_pyramid(query_groups: Sequence[Sequence[Tensor]],
                  exemplar_groups: Sequence[Sequence[Tensor]],
                  k: Optional[int] = None) -> List[Tensor]:
    """Stack per-level similarities of each large layer.

    Returns one tensor per group: ``K x |L_p| x H_p x W_p x h x w``, or for a
    single exemplar index ``k`` the ``|L_p| x H_p x W_p x h x w`` block.
    """
    if len(query_groups) != len(exemplar_groups):
        raise ShapeError(f"pyramid group count mismatch: {len(query_groups)} vs "
                         f"{len(exemplar_groups)}")
    out = []
    for p, (qs, ss) in enumerate(zip(query_groups, exemplar_groups)):
        if len(qs) != len(ss):
            raise ShapeError(f"group {p}: {len(qs)} query levels vs {len(ss)} exemplar levels")
        if k is not None:
            ss = [s[k:k + 1] for s in ss]
        levels = [cosine_similarity_batch(q, s) for q, s in zip(qs, ss)]
        block = stack(levels, axis=1)
        out.append(block[0] if k is not None else block)
    return out
