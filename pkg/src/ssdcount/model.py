"""End-to-end counting model: backbone -> RoIAlign -> FCE -> similarity -> SLM -> decoder."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .data import (
    BackboneConfig,
    DISConfig,
    FeaturePyramid,
    Sample,
    ToyBackbone,
    dynamic_scale,
    read_pyramid,
    resize_sample,
    roi_align_many,
)
from .decoder import DecoderParams, average_exemplars, blocks_for_stride, decode
from .fce import FCEParams, enhance
from .module import Module
from .similarity import cosine_similarity_batch
from .slm import SLMParams, slm_forward
from .tensor import ShapeError, Tensor, pad2d, stack


@dataclass(frozen=True)
class ModelConfig:
    width: int = 32
    levels: Tuple[int, ...] = (2, 2, 2)
    frozen_backbone: bool = False
    roi_size: int = 8
    roi_sampling: int = 2
    fce: bool = True
    fce_embed_ratio: float = 0.5
    fce_dual_softmax: bool = False
    fce_per_level: bool = False
    slm_widths: Tuple[int, ...] = (8, 16, 32)
    dis: bool = True
    dis_gamma: float = 16.0
    dis_eta: float = 12.0
    seed: int = 0
    dtype: str = "float32"

    @property
    def backbone(self) -> BackboneConfig:
        return BackboneConfig(width=self.width, levels=tuple(self.levels),
                              frozen=self.frozen_backbone)

    @property
    def dis_config(self) -> DISConfig:
        return DISConfig(gamma=self.dis_gamma, eta=self.dis_eta)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype).type

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        d = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in known}
        return cls(**d)


def stage_hash(x) -> str:
    h = hashlib.sha256()
    items = x if isinstance(x, (list, tuple)) else [x]
    for t in items:
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        h.update(str(arr.shape).encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


@dataclass
class ForwardResult:
    density: Tensor                      # 1 x H x W at the (scaled) input resolution
    per_exemplar: Tensor                 # K x 1 x H x W
    similarity: List[Tensor]             # per group: K x |L_p| x H_p x W_p x h x w
    sample: Sample                       # the sample actually fed (after DIS)
    scale: float = 1.0
    trace: Dict[str, str] = field(default_factory=dict)

    @property
    def count(self) -> float:
        return float(self.density.data.sum(dtype=np.float64))


class SSDModel(Module):
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        self.cfg = cfg
        dtype = cfg.np_dtype
        bcfg = cfg.backbone
        self.backbone = ToyBackbone(bcfg, seed=cfg.seed, dtype=dtype)
        rng = np.random.default_rng([cfg.seed, 404])
        self.fce = []
        for ch, n in zip(bcfg.channels, bcfg.levels):
            copies = n if cfg.fce_per_level else 1
            self.fce.append([FCEParams(ch, rng, dtype, cfg.fce_embed_ratio, cfg.fce_dual_softmax)
                             for _ in range(copies)])
        self.slm = SLMParams(bcfg.levels, cfg.slm_widths, seed=cfg.seed, dtype=dtype)
        self.decoder = DecoderParams(cfg.slm_widths[-1], blocks_for_stride(bcfg.strides[0]),
                                     seed=cfg.seed, dtype=dtype)

    # -- stages ---------------------------------------------------------------

    def prepare(self, sample: Sample) -> Tuple[Sample, float]:
        """Apply the dynamic scale rule (image-backed samples only)."""
        if not self.cfg.dis or sample.image is None:
            return sample, 1.0
        scale = dynamic_scale(sample.boxes, self.cfg.dis_config)
        return resize_sample(sample, scale), scale

    def features(self, sample: Sample) -> FeaturePyramid:
        if sample.image is None:
            pyr = read_pyramid(sample.feature_ref, dtype=self.cfg.np_dtype)
            if pyr.level_counts != tuple(self.cfg.levels):
                raise ShapeError(f"feature file has levels {pyr.level_counts}, model expects "
                                 f"{tuple(self.cfg.levels)}")
            return pyr
        img = Tensor(sample.image, dtype=self.cfg.np_dtype)
        _, h, w = img.shape
        d = self.cfg.backbone.divisor
        img = pad2d(img, -h % d, -w % d)
        return self.backbone(img)

    def exemplar_features(self, pyr: FeaturePyramid, boxes) -> List[List[Tensor]]:
        r, sr = self.cfg.roi_size, self.cfg.roi_sampling
        return [[roi_align_many(lvl, boxes, r, r, stride, sr) for lvl in levels]
                for levels, stride in zip(pyr.groups, pyr.strides)]

    def enhance(self, pyr: FeaturePyramid, ex: List[List[Tensor]]):
        if not self.cfg.fce:
            return [list(g) for g in pyr.groups], ex
        qs, ss = [], []
        for p, (levels, exs) in enumerate(zip(pyr.groups, ex)):
            gq, gs = [], []
            for l, (fq, fs) in enumerate(zip(levels, exs)):
                params = self.fce[p][l if self.cfg.fce_per_level else 0]
                eq, es = enhance(fq, fs, params)
                gq.append(eq)
                gs.append(es)
            qs.append(gq)
            ss.append(gs)
        return qs, ss

    def similarity(self, qs, ss) -> List[Tensor]:
        return [stack([cosine_similarity_batch(q, s) for q, s in zip(gq, gs)], axis=1)
                for gq, gs in zip(qs, ss)]

    # -- full pass ------------------------------------------------------------

    def forward(self, sample: Sample, trace: bool = False) -> ForwardResult:
        fed, scale = self.prepare(sample)
        h, w = fed.image_size
        pyr = self.features(fed)
        ex = self.exemplar_features(pyr, fed.boxes)
        qs, ss = self.enhance(pyr, ex)
        sims = self.similarity(qs, ss)
        m = slm_forward(sims, self.slm)
        dens = decode(m, self.decoder)
        if dens.shape[-2] < h or dens.shape[-1] < w:
            raise ShapeError(f"decoded map {dens.shape[-2:]} smaller than input {(h, w)}")
        dens = dens[:, :, :h, :w]
        avg = average_exemplars(dens)
        tr = {}
        if trace:
            tr = {"input": stage_hash(fed.image if fed.image is not None else np.zeros(0)),
                  "backbone": stage_hash([t for g in pyr.groups for t in g]),
                  "exemplars": stage_hash([t for g in ex for t in g]),
                  "enhanced": stage_hash([t for g in qs for t in g] + [t for g in ss for t in g]),
                  "similarity": stage_hash(sims),
                  "slm": stage_hash(m),
                  "density": stage_hash(avg)}
        return ForwardResult(avg, dens, sims, fed, scale, tr)

    __call__ = forward


def build_model(cfg: ModelConfig) -> SSDModel:
    return SSDModel(cfg)


def load_model(ckpt: Path) -> Tuple[SSDModel, dict]:
    from .module import load_checkpoint
    meta, state = load_checkpoint(ckpt)
    model = SSDModel(ModelConfig.from_dict(meta["model"]))
    model.load_state_dict(state)
    return model, meta
