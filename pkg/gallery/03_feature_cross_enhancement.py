"""Cross attention between query and exemplar features, starting from identity.

Run: python3 gallery/03_feature_cross_enhancement.py
"""
import numpy as np

from ssdcount.fce import FCEParams, attention, enhance
from ssdcount.tensor import Tensor

rng = np.random.default_rng(0)
fq = Tensor(rng.normal(size=(16, 6, 8)), dtype=np.float64)
fs = Tensor(rng.normal(size=(3, 16, 4, 4)), dtype=np.float64)
params = FCEParams(16, rng, np.float64)

a = attention(fq, fs, params).data
print(f"attention {a.shape}: rows sum to {a.sum(axis=1).min():.6f}..{a.sum(axis=1).max():.6f}")

eq, es = enhance(fq, fs, params)
print(f"fresh parameters: max |Eq - Fq| = {np.abs(eq.data - fq.data).max():.1e} (identity start)")

params.trans_q.weight.data = rng.normal(scale=0.2, size=params.trans_q.weight.shape)
params.trans_s.weight.data = rng.normal(scale=0.2, size=params.trans_s.weight.shape)
eq, es = enhance(fq, fs, params)
print(f"after perturbing trans layers: max |Eq - Fq| = {np.abs(eq.data - fq.data).max():.3f}, "
      f"max |Es - Fs| = {np.abs(es.data - fs.data).max():.3f}")

perm = [2, 0, 1]
eq2, es2 = enhance(fq, Tensor(fs.data[perm], dtype=np.float64), params)
print(f"exemplar reorder: query change {np.abs(eq2.data - eq.data).max():.1e}, "
      f"exemplar outputs follow the permutation: {np.allclose(es2.data, es.data[perm])}")
