"""Center-pivot 4D convolution: two 2D convolutions instead of a dense k^4 kernel.

Run: python3 gallery/05_center_pivot_conv.py
"""
import itertools

import numpy as np

from ssdcount.slm import CP4DConvLayer, cp4d_conv, dense_center_pivot_kernel, profile
from ssdcount.tensor import Tensor

rng = np.random.default_rng(0)
layer = CP4DConvLayer(rng, 2, 3, k=3, stride_q=1, stride_s=2, dtype=np.float64)
x = rng.normal(size=(2, 5, 5, 6, 6))
with profile() as prof:
    y = cp4d_conv(Tensor(x, dtype=np.float64), layer).data

dense = dense_center_pivot_kernel(layer)
nonzero = sum(np.any(dense[:, :, a, b, c, d]) for a, b, c, d in itertools.product(range(3), repeat=4))
print(f"output {y.shape}; dense-equivalent kernel uses {nonzero} of {3 ** 4} taps")

# dense reference at one output position
o, i, j, a, b = 1, 2, 3, 1, 2
acc = 0.0
for di, dj, da, db in itertools.product(range(3), repeat=4):
    yy, xx, ya, xb = i + di - 1, j + dj - 1, 2 * a + da - 1, 2 * b + db - 1
    if 0 <= yy < 5 and 0 <= xx < 5 and 0 <= ya < 6 and 0 <= xb < 6:
        acc += dense[o, :, di, dj, da, db] @ x[:, yy, xx, ya, xb]
print(f"dense reference {acc:.10f} vs cp4d {y[o, i, j, a, b]:.10f}")

rec = prof.layers[0]
print(f"multiplies: measured {rec.flops_cp4d}, analytic {rec.flops_analytic}, "
      f"dense k^4 {rec.flops_dense_equiv} ({rec.flops_cp4d / rec.flops_dense_equiv:.1%})")
