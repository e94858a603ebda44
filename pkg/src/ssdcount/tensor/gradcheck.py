"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import NonFiniteError, Tensor


@dataclass
class GradCheckReport:
    max_rel_err: float
    max_abs_err: float
    n_checked: int
    tol: float
    worst_index: Optional[tuple] = None

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def _relative(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(f: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
               tol: float = 1e-4, max_per_input: Optional[int] = None,
               rng: Optional[np.random.Generator] = None, floor: float = 1e-7) -> GradCheckReport:
    """Compare backward gradients of scalar ``f()`` with central differences.

    ``f`` closes over ``inputs``; each input's ``data`` is perturbed in place
    and restored.  ``max_per_input`` subsamples coordinates for large inputs.
    Relative error uses ``max(|analytic|, |numeric|, floor)`` as denominator.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    out = f()
    if out.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise NonFiniteError("grad_check: f is not finite at the base point")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = rng or np.random.default_rng(0)
    worst = (0.0, 0.0, None)
    n = 0
    for idx_in, (t, ga) in enumerate(zip(inputs, analytic)):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_per_input is not None and flat.size > max_per_input:
            coords = np.sort(rng.choice(flat.size, size=max_per_input, replace=False))
        numeric = np.empty(coords.size)
        for j, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + eps
            fp = float(f().data.reshape(-1)[0])
            flat[c] = orig - eps
            fm = float(f().data.reshape(-1)[0])
            flat[c] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"grad_check: non-finite f near input {idx_in}[{c}]")
            numeric[j] = (fp - fm) / (2 * eps)
        a = ga.reshape(-1)[coords].astype(np.float64)
        rel = _relative(a, numeric, floor)
        n += coords.size
        if rel.size:
            j = int(np.argmax(rel))
            if rel[j] >= worst[0]:
                worst = (float(rel[j]), float(np.abs(a - numeric).max()), (idx_in, int(coords[j])))
    return GradCheckReport(max_rel_err=worst[0], max_abs_err=worst[1], n_checked=n, tol=tol,
                           worst_index=worst[2])
