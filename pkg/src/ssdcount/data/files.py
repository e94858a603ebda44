"""On-disk formats: annotation JSON, binary PPM/PGM images, feature-pyramid manifests.

A dataset directory holds one ``<name>.json`` annotation per sample::

    {"image": "0001.ppm", "points": [[x, y], ...],
     "boxes": [[x1, y1, x2, y2], ...], "category_id": 3}

``image`` may instead point at a feature manifest (``*.json``)::

    {"image_size": [H, W], "dis_applied": true,
     "groups": [{"stride": 8, "levels": ["L1_1.ssdt", "L1_2.ssdt"]}, ...]}

Level files are SSDT tensors ``C x H_p x W_p`` named ``L{p}_{l}.ssdt`` (1-based).
Feature-backed samples are assumed to be scaled upstream, so no dynamic
rescaling is applied to them.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from ..tensor import Tensor
from ..tensor import io as tio
from .types import ExemplarBox, FeaturePyramid, Sample

PathLike = Union[str, Path]


def _read_token(buf: bytes, pos: int) -> Tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        if buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif buf[pos:pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def read_pnm(path: PathLike) -> np.ndarray:
    """Read binary PGM (P5) or PPM (P6) as float32 ``C x H x W`` in [0, 1]."""
    buf = Path(path).read_bytes()
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported PNM type {magic!r}")
    w, pos = _read_token(buf, pos)
    h, pos = _read_token(buf, pos)
    maxval, pos = _read_token(buf, pos)
    w, h, maxval = int(w), int(h), int(maxval)
    pos += 1
    channels = 3 if magic == b"P6" else 1
    dt = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    data = np.frombuffer(buf, dtype=dt, count=w * h * channels, offset=pos)
    img = data.reshape(h, w, channels).transpose(2, 0, 1).astype(np.float32) / maxval
    return img


def write_pnm(path: PathLike, image: np.ndarray) -> None:
    """Write ``C x H x W`` values in [0, 1] as 8-bit PPM (C=3) or PGM (C=1)."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[None]
    c, h, w = image.shape
    magic = {1: b"P5", 3: b"P6"}[c]
    q = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode() + q.tobytes())


def sample_to_json(s: Sample, image_ref: str) -> dict:
    return {"image": image_ref, "points": s.points.tolist(),
            "boxes": [b.as_list() for b in s.boxes], "category_id": int(s.category_id)}


def write_sample(directory: PathLike, s: Sample) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    name = s.name or "sample"
    if s.image is None:
        raise ValueError("write_sample needs an image-backed sample")
    write_pnm(directory / f"{name}.ppm", s.image)
    path = directory / f"{name}.json"
    path.write_text(json.dumps(sample_to_json(s, f"{name}.ppm")))
    return path


def read_sample(path: PathLike) -> Sample:
    path = Path(path)
    ann = json.loads(path.read_text())
    ref = path.parent / ann["image"]
    boxes = tuple(ExemplarBox(*map(float, b)) for b in ann["boxes"])
    points = np.asarray(ann.get("points", []), dtype=np.float64).reshape(-1, 2)
    cid = int(ann.get("category_id", -1))
    if ref.suffix == ".json":
        manifest = json.loads(ref.read_text())
        return Sample(boxes=boxes, points=points, feature_ref=str(ref),
                      image_size=tuple(manifest["image_size"]), category_id=cid, name=path.stem)
    return Sample(boxes=boxes, points=points, image=read_pnm(ref), category_id=cid,
                  name=path.stem)


def read_dataset(directory: PathLike) -> List[Sample]:
    directory = Path(directory)
    files = sorted(p for p in directory.glob("*.json") if not p.name.startswith("manifest"))
    return [read_sample(p) for p in files]


def write_dataset(directory: PathLike, samples: Sequence[Sample]) -> None:
    for s in samples:
        write_sample(directory, s)


def write_pyramid(directory: PathLike, pyramid: FeaturePyramid, image_size: Tuple[int, int],
                  dis_applied: bool = True) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    groups = []
    for p, levels in enumerate(pyramid.groups, start=1):
        names = []
        for l, t in enumerate(levels, start=1):
            fname = f"L{p}_{l}.ssdt"
            tio.save(directory / fname, t.data)
            names.append(fname)
        groups.append({"stride": int(pyramid.strides[p - 1]), "levels": names})
    manifest = {"image_size": list(image_size), "dis_applied": dis_applied, "groups": groups}
    path = directory / "manifest.json"
    tmp = path.with_name("manifest.json.tmp")
    tmp.write_text(json.dumps(manifest, indent=1))
    os.replace(tmp, path)
    return path


def read_pyramid(manifest_path: PathLike, dtype=np.float32) -> FeaturePyramid:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    groups, strides = [], []
    for g in manifest["groups"]:
        groups.append([Tensor(tio.load(manifest_path.parent / f).astype(dtype)) for f in g["levels"]])
        strides.append(int(g["stride"]))
    return FeaturePyramid(groups=groups, strides=strides)


def export_density_pgm(path: PathLike, density: np.ndarray) -> dict:
    """Min-max normalise to 0..255 and write PGM; the constants go to ``<path>.json``."""
    d = np.asarray(density, dtype=np.float64).reshape(density.shape[-2:])
    lo, hi = float(d.min()), float(d.max())
    span = hi - lo if hi > lo else 1.0
    write_pnm(path, ((d - lo) / span)[None])
    meta = {"min": lo, "max": hi, "scale": span / 255.0,
            "inverse": "value = min + pixel * scale"}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=1))
    return meta
