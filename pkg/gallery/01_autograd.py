"""Reverse-mode autograd on numpy arrays, checked against central differences.

Run: python3 gallery/01_autograd.py
"""
import numpy as np

from ssdcount.tensor import Tensor, conv2d, grad_check, group_norm, relu, tsum

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(2, 6, 6)), requires_grad=True, dtype=np.float64)
w = Tensor(rng.normal(size=(4, 2, 3, 3)), requires_grad=True, dtype=np.float64)
gamma = Tensor(np.ones(4), requires_grad=True, dtype=np.float64)
beta = Tensor(np.full(4, 0.3), requires_grad=True, dtype=np.float64)


def f():
    return tsum(relu(group_norm(conv2d(x, w, pad=1), 2, gamma, beta)))


out = f()
out.backward()
print(f"f = {out.item():.6f}")
print(f"d f / d w[0, 0] =\n{np.round(w.grad[0, 0], 4)}")

report = grad_check(f, [x, w, gamma, beta])
print(f"finite-difference check: max relative error {report.max_rel_err:.2e} "
      f"over {report.n_checked} coordinates -> {'ok' if report.passed else 'FAILED'}")
