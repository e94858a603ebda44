"""Synthetic few-shot counting scenes.

Each scene holds ``N`` non-overlapping textured blobs of one target category
plus distractor blobs drawn from other categories.  Only target blobs are
annotated.  Category appearance (shape, colour, stripe texture) is a pure
function of the category id, so train and validation splits can use disjoint
category pools.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .types import ExemplarBox, Sample

TRAIN_CATEGORIES = tuple(range(0, 48))
VAL_CATEGORIES = tuple(range(1000, 1024))

_SHAPES = ("disc", "square", "diamond", "ring")


@dataclass(frozen=True)
class SynthConfig:
    height: int = 128
    width: int = 192
    count_range: Tuple[int, int] = (4, 15)
    distractor_range: Tuple[int, int] = (2, 6)
    size_range: Tuple[float, float] = (11.0, 19.0)
    shots: int = 3
    categories: Tuple[int, ...] = TRAIN_CATEGORIES
    max_retries: int = 200


@dataclass(frozen=True)
class Category:
    cid: int
    shape: str
    color: Tuple[float, float, float]
    stripe_freq: float
    stripe_angle: float


def category(cid: int) -> Category:
    rng = np.random.default_rng([cid, 7])
    hue = rng.uniform()
    sat = rng.uniform(0.55, 1.0)
    val = rng.uniform(0.6, 1.0)
    return Category(cid=cid, shape=_SHAPES[int(rng.integers(len(_SHAPES)))],
                    color=colorsys.hsv_to_rgb(hue, sat, val),
                    stripe_freq=float(rng.uniform(0.0, 0.6)),
                    stripe_angle=float(rng.uniform(0, np.pi)))


def _mask(shape: str, dx: np.ndarray, dy: np.ndarray, r: float) -> np.ndarray:
    if shape == "disc":
        return dx ** 2 + dy ** 2 <= r ** 2
    if shape == "square":
        return (np.abs(dx) <= 0.85 * r) & (np.abs(dy) <= 0.85 * r)
    if shape == "diamond":
        return np.abs(dx) + np.abs(dy) <= 1.15 * r
    d2 = dx ** 2 + dy ** 2
    return (d2 <= r ** 2) & (d2 >= (0.5 * r) ** 2)


def _paint(img: np.ndarray, cat: Category, cx: float, cy: float, r: float) -> None:
    _, h, w = img.shape
    x0, x1 = max(int(cx - r - 1), 0), min(int(cx + r + 2), w)
    y0, y1 = max(int(cy - r - 1), 0), min(int(cy + r + 2), h)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dx, dy = xx + 0.5 - cx, yy + 0.5 - cy
    m = _mask(cat.shape, dx, dy, r)
    phase = dx * np.cos(cat.stripe_angle) + dy * np.sin(cat.stripe_angle)
    shade = 1.0 - 0.35 * (np.sin(2 * np.pi * cat.stripe_freq * phase) > 0) * (cat.stripe_freq > 0.15)
    for ch in range(3):
        region = img[ch, y0:y1, x0:x1]
        region[m] = (cat.color[ch] * shade)[m]


def _place(rng, placed: List[Tuple[float, float, float]], r: float, h: int, w: int,
           retries: int) -> Optional[Tuple[float, float]]:
    for _ in range(retries):
        cx = rng.uniform(r + 1, w - r - 1)
        cy = rng.uniform(r + 1, h - r - 1)
        if all((cx - px) ** 2 + (cy - py) ** 2 >= (r + pr + 2) ** 2 for px, py, pr in placed):
            return cx, cy
    return None


def synth_sample(cfg: SynthConfig, seed: int, name: str = "") -> Sample:
    rng = np.random.default_rng([seed, 2024])
    h, w = cfg.height, cfg.width
    pool = list(cfg.categories)
    target = pool[int(rng.integers(len(pool)))]
    others = [c for c in pool if c != target]

    bg = rng.uniform(0.05, 0.35)
    img = (bg + 0.04 * rng.standard_normal((3, h, w))).clip(0, 1)

    n_target = int(rng.integers(cfg.count_range[0], cfg.count_range[1] + 1))
    n_distract = int(rng.integers(cfg.distractor_range[0], cfg.distractor_range[1] + 1))
    size = rng.uniform(*cfg.size_range)
    placed: List[Tuple[float, float, float]] = []
    targets: List[Tuple[float, float, float]] = []

    tcat = category(target)
    for _ in range(n_target):
        r = 0.5 * size * rng.uniform(0.9, 1.1)
        pos = _place(rng, placed, r, h, w, cfg.max_retries)
        if pos is None:
            break
        placed.append((pos[0], pos[1], r))
        targets.append((pos[0], pos[1], r))
        _paint(img, tcat, pos[0], pos[1], r)

    if others:
        dcats = [category(c) for c in rng.choice(others, size=min(2, len(others)), replace=False)]
        for i in range(n_distract):
            r = 0.5 * rng.uniform(*cfg.size_range)
            pos = _place(rng, placed, r, h, w, cfg.max_retries)
            if pos is None:
                break
            placed.append((pos[0], pos[1], r))
            _paint(img, dcats[i % len(dcats)], pos[0], pos[1], r)

    if not targets:
        raise RuntimeError(f"could not place any target blob (seed {seed})")
    img = np.round(img.clip(0, 1) * 255) / 255
    picks = rng.choice(len(targets), size=cfg.shots, replace=len(targets) < cfg.shots)
    boxes = []
    for i in picks:
        cx, cy, r = targets[int(i)]
        boxes.append(ExemplarBox(max(cx - r - 1, 0.0), max(cy - r - 1, 0.0),
                                 min(cx + r + 1, float(w)), min(cy + r + 1, float(h))))
    points = np.array([[t[0], t[1]] for t in targets], dtype=np.float64).reshape(-1, 2)
    return Sample(boxes=tuple(boxes), points=points, image=img.astype(np.float32),
                  category_id=target, name=name)


def synth_dataset(cfg: SynthConfig, n: int, seed: int = 0) -> List[Sample]:
    """``n`` scenes; sample ``i`` depends only on ``(seed, i)``."""
    return [synth_sample(cfg, seed=seed * 100003 + i, name=f"{i:04d}") for i in range(n)]


def split_configs(base: SynthConfig = SynthConfig()) -> Tuple[SynthConfig, SynthConfig]:
    from dataclasses import replace
    return replace(base, categories=TRAIN_CATEGORIES), replace(base, categories=VAL_CATEGORIES)
