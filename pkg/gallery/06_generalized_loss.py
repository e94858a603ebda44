"""Unbalanced entropic OT loss against dot annotations, compared with Gaussian MSE.

Run: python3 gallery/06_generalized_loss.py
"""
import numpy as np

from ssdcount.loss import GenLossConfig, generalized_loss, mse_loss, render_gaussian
from ssdcount.tensor import Tensor

points = np.array([[20.0, 18.0], [70.0, 30.0], [40.0, 50.0], [100.0, 44.0]])
h, w = 64, 128
truth = render_gaussian(points, h, w, sigma=2.0)
shifted = render_gaussian(points + [6.0, 0.0], h, w, sigma=2.0)

print(f"{'density':<22}{'count':>7}{'OT loss':>11}{'MSE':>10}{'iters':>7}")
for name, dens in [("zero", np.zeros_like(truth)), ("uniform", np.full_like(truth, 4 / (h * w))),
                   ("half mass", 0.5 * truth), ("exact", truth), ("shifted 6px", shifted),
                   ("double mass", 2 * truth)]:
    t = Tensor(dens, dtype=np.float64)
    loss, res = generalized_loss(t, points, GenLossConfig())
    print(f"{name:<22}{dens.sum():>7.2f}{loss.item():>11.4f}{mse_loss(t, points).item():>10.4f}"
          f"{res.iterations:>7}")

print("MSE scores a 6px shift worse than predicting nothing; the OT loss ranks it just behind the exact map.")
