"""Synthetic counting scenes, dynamic image scaling, and RoIAlign exemplar crops.

Run: python3 gallery/02_data_and_scaling.py [OUT_DIR]
"""
import sys
from pathlib import Path

import numpy as np

from ssdcount.data import (
    BackboneConfig,
    DISConfig,
    SynthConfig,
    ToyBackbone,
    dynamic_scale,
    resize_sample,
    roi_align_many,
    synth_sample,
    write_sample,
)
from ssdcount.tensor import Tensor

out = Path(sys.argv[1] if len(sys.argv) > 1 else "gallery_out")
s = synth_sample(SynthConfig(), seed=3, name="scene")
print(f"scene {s.image_size}, category {s.category_id}, {s.count} targets, {s.shots} exemplars")
print(f"wrote {write_sample(out, s)}")

for gamma in (16.0, 32.0):
    scale = dynamic_scale(s.boxes, DISConfig(gamma=gamma, eta=12.0))
    mean_side = np.mean([[b.width, b.height] for b in s.boxes], axis=0).min()
    print(f"gamma={gamma:>4}: smaller mean exemplar side {mean_side:.1f}px -> scale {scale:.3f}")

big = resize_sample(s, dynamic_scale(s.boxes, DISConfig(32.0, 12.0)))
print(f"rescaled image {big.image_size}, first box {np.round(big.boxes[0].as_list(), 1)}")

pyr = ToyBackbone(BackboneConfig())(Tensor(s.image))
for p, (levels, stride) in enumerate(zip(pyr.groups, pyr.strides), start=1):
    crops = roi_align_many(levels[0], s.boxes, 8, 8, stride)
    print(f"group {p}: {len(levels)} levels of {levels[0].shape}, exemplar crops {crops.shape}")
