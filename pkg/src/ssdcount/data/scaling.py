"""Dynamic image scale: upscale inputs whose exemplars are small."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..tensor import bilinear_matrix
from .types import DISConfig, ExemplarBox, Sample


def dynamic_scale(boxes: Sequence[ExemplarBox], cfg: DISConfig) -> float:
    """Expansion factor from the mean exemplar (width, height).

    Returns 1 when the smaller mean side reaches ``cfg.gamma``; otherwise
    ``(gamma - min_side) / eta + 1``.
    """
    if len(boxes) < 1:
        raise ValueError("dynamic_scale needs at least one box")
    sides = np.array([[b.width, b.height] for b in boxes], dtype=np.float64)
    if np.any(sides <= 0):
        raise ValueError("degenerate exemplar box (zero area)")
    smallest = float(sides.mean(axis=0).min())
    if smallest >= cfg.gamma:
        return 1.0
    return (cfg.gamma - smallest) / cfg.eta + 1.0


def resize_image(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    _, h, w = image.shape
    if (out_h, out_w) == (h, w):
        return image
    ry = bilinear_matrix(h, out_h)
    rx = bilinear_matrix(w, out_w)
    out = np.matmul(ry, np.matmul(image.astype(np.float64), rx.T))
    return out.astype(image.dtype)


def resize_sample(s: Sample, scale: float) -> Sample:
    """Resize the image by ``scale`` and map boxes/points with the same factor."""
    if scale < 1:
        raise ValueError(f"resize scale must be >= 1, got {scale}")
    if scale == 1:
        return s
    if s.image is None:
        raise ValueError("resize_sample needs an image; feature-backed samples are pre-scaled")
    _, h, w = s.image.shape
    out_h, out_w = int(round(scale * h)), int(round(scale * w))
    image = resize_image(s.image, out_h, out_w)
    boxes = []
    for b in s.boxes:
        sb = b.scaled(scale)
        boxes.append(ExemplarBox(max(sb.x1, 0.0), max(sb.y1, 0.0),
                                 min(sb.x2, float(out_w)), min(sb.y2, float(out_h))))
    points = s.points * scale
    points[:, 0] = np.minimum(points[:, 0], out_w)
    points[:, 1] = np.minimum(points[:, 1], out_h)
    return Sample(boxes=tuple(boxes), points=points, image=image, category_id=s.category_id,
                  name=s.name)
