from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..tensor import Tensor


@dataclass(frozen=True)
class ExemplarBox:
    """Axis-aligned exemplar box in image pixel coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"degenerate exemplar box {self.as_list()}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def scaled(self, s: float) -> "ExemplarBox":
        return ExemplarBox(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)

    def as_list(self) -> List[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class Sample:
    """Query image (or precomputed feature reference) with exemplars and dot annotations.

    ``image`` is ``3 x H x W`` in [0, 1]; ``points`` is ``m x 2`` as (x, y).
    When ``feature_ref`` is set, ``image_size`` must be given instead of an image.
    """

    boxes: Tuple[ExemplarBox, ...]
    points: np.ndarray
    image: Optional[np.ndarray] = None
    feature_ref: Optional[str] = None
    image_size: Optional[Tuple[int, int]] = None
    category_id: int = -1
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "points", pts)
        if self.image is not None:
            img = np.asarray(self.image)
            if img.ndim != 3 or img.shape[0] != 3:
                raise ValueError(f"image must be 3 x H x W, got {img.shape}")
            object.__setattr__(self, "image_size", (img.shape[1], img.shape[2]))
        elif self.feature_ref is None:
            raise ValueError("sample needs an image or a feature reference")
        if self.image_size is None:
            raise ValueError("feature-backed sample needs image_size")
        if len(self.boxes) < 1:
            raise ValueError("sample needs at least one exemplar box")
        h, w = self.image_size
        for b in self.boxes:
            if b.x1 < 0 or b.y1 < 0 or b.x2 > w or b.y2 > h:
                raise ValueError(f"box {b.as_list()} outside image {w}x{h}")
        if len(pts) and (pts.min() < 0 or pts[:, 0].max() > w or pts[:, 1].max() > h):
            raise ValueError("annotation point outside image bounds")

    @property
    def count(self) -> int:
        return len(self.points)

    @property
    def shots(self) -> int:
        return len(self.boxes)

    def with_boxes(self, boxes: Sequence[ExemplarBox]) -> "Sample":
        return Sample(boxes=tuple(boxes), points=self.points, image=self.image,
                      feature_ref=self.feature_ref,
                      image_size=None if self.image is not None else self.image_size,
                      category_id=self.category_id, name=self.name)


@dataclass
class FeaturePyramid:
    """Groups of same-shape levels; group ``p`` has stride ``strides[p]``."""

    groups: List[List[Tensor]]
    strides: List[int] = field(default_factory=list)

    def __post_init__(self):
        prev = None
        for p, levels in enumerate(self.groups):
            if not levels:
                raise ValueError(f"group {p} is empty")
            shape = levels[0].shape
            for t in levels[1:]:
                if t.shape != shape:
                    raise ValueError(f"group {p}: level shapes differ ({shape} vs {t.shape})")
            if prev is not None and not (shape[1] < prev[1] and shape[2] < prev[2]):
                raise ValueError(f"group {p}: spatial extent {shape[1:]} does not shrink")
            prev = shape

    @property
    def level_counts(self) -> Tuple[int, ...]:
        return tuple(len(g) for g in self.groups)

    def shapes(self) -> List[Tuple[int, ...]]:
        return [g[0].shape for g in self.groups]


@dataclass(frozen=True)
class DISConfig:
    gamma: float = 32.0
    eta: float = 12.0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("DIS eta must be positive")
