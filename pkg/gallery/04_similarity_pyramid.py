"""4D cosine similarity between query positions and exemplar positions.

Run: python3 gallery/04_similarity_pyramid.py
"""
import numpy as np

from ssdcount.data import SynthConfig, synth_sample
from ssdcount.model import ModelConfig, SSDModel
from ssdcount.tensor import no_grad

s = synth_sample(SynthConfig(), seed=1)
model = SSDModel(ModelConfig(dis=False))
with no_grad():
    pyr = model.features(s)
    ex = model.exemplar_features(pyr, s.boxes)
    sims = model.similarity(*model.enhance(pyr, ex))

for p, block in enumerate(sims, start=1):
    d = block.data
    print(f"group {p}: K x |L| x H x W x h x w = {d.shape}, range [{d.min():.2f}, {d.max():.2f}]")

# peak similarity per query cell against exemplar 1, finest group, first level
peak = sims[0].data[0, 0].max(axis=(-2, -1))
stride = pyr.strides[0]
on, off = [], []
for y in range(peak.shape[0]):
    for x in range(peak.shape[1]):
        cx, cy = (x + 0.5) * stride, (y + 0.5) * stride
        near = np.min(np.hypot(s.points[:, 0] - cx, s.points[:, 1] - cy)) < stride
        (on if near else off).append(peak[y, x])
print(f"peak similarity near targets {np.mean(on):.3f} vs elsewhere {np.mean(off):.3f}")
