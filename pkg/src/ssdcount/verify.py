"""Finite-difference gradient checks for each differentiable stage, at 64-bit.

Every check draws random inputs with a fixed seed.  Where a ReLU sits in the
graph, biases are shifted away from zero so that no pre-activation lies
within the finite-difference step of the kink.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable, Iterator, List, Tuple

import numpy as np

from .tensor import (
    GradCheckReport,
    Tensor,
    conv2d,
    grad_check,
    group_norm,
    l2_normalize,
    matmul,
    mul,
    relu,
    softmax,
    square,
    tsum,
    upsample_bilinear,
)

EPS = 1e-5
TOL = 1e-4
F64 = np.float64


def _t(rng, *shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True, dtype=F64)


def _away_from_zero(rng, *shape, margin=1e-3) -> Tensor:
    mag = rng.uniform(0.1, 1.0, size=shape) + margin
    return Tensor(mag * rng.choice([-1.0, 1.0], size=shape), requires_grad=True, dtype=F64)


def _weighted(out: Tensor, rng) -> Tensor:
    """Random linear functional of ``out`` so every output coordinate matters."""
    w = Tensor(rng.uniform(0.5, 1.5, size=out.shape), dtype=F64)
    return tsum(mul(out, w))


def _merge(reports: Iterable[GradCheckReport]) -> GradCheckReport:
    reps = list(reports)
    worst = max(reps, key=lambda r: r.max_rel_err)
    return GradCheckReport(worst.max_rel_err, max(r.max_abs_err for r in reps),
                           sum(r.n_checked for r in reps), worst.tol, worst.worst_index)


def check_tensor_ops(seed: int = 0) -> GradCheckReport:
    rng = np.random.default_rng([seed, 1])
    reps = []
    a, b = _t(rng, 3, 4), _t(rng, 4, 2)
    reps.append(grad_check(lambda: _weighted(matmul(a, b), rng_fixed(seed)), [a, b], EPS, TOL))
    x = _t(rng, 3, 5, lo=-2, hi=2)
    reps.append(grad_check(lambda: _weighted(softmax(x, axis=-1), rng_fixed(seed)), [x], EPS, TOL))
    r = _away_from_zero(rng, 4, 4)
    reps.append(grad_check(lambda: _weighted(relu(r), rng_fixed(seed)), [r], EPS, TOL))
    p, q = _t(rng, 2, 3), _t(rng, 2, 3)
    reps.append(grad_check(lambda: tsum(square(mul(p, q))), [p, q], EPS, TOL))
    img, w, bias = _t(rng, 2, 5, 5), _t(rng, 3, 2, 3, 3), _t(rng, 3)
    reps.append(grad_check(lambda: _weighted(conv2d(img, w, bias, stride=2, pad=1),
                                             rng_fixed(seed)), [img, w, bias], EPS, TOL))
    u = _t(rng, 2, 3, 2)
    reps.append(grad_check(lambda: _weighted(upsample_bilinear(u, 6, 5), rng_fixed(seed)), [u],
                           EPS, TOL))
    g, gam, bet = _t(rng, 4, 3, 3), _t(rng, 4), _t(rng, 4)
    reps.append(grad_check(lambda: _weighted(group_norm(g, 2, gam, bet), rng_fixed(seed)),
                           [g, gam, bet], EPS, TOL))
    n = _t(rng, 3, 4)
    reps.append(grad_check(lambda: _weighted(l2_normalize(n, axis=0), rng_fixed(seed)), [n],
                           EPS, TOL))
    return _merge(reps)


def rng_fixed(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 99])


def _nudge_biases(module, rng) -> None:
    for name, p in module.named_parameters():
        if name.endswith("bias") or name.endswith("gn_beta"):
            p.data = p.data + rng.uniform(0.05, 0.2, size=p.shape)
        elif "trans_" in name and name.endswith("weight"):
            p.data = rng.uniform(-0.2, 0.2, size=p.shape)


def check_fce(seed: int = 0) -> GradCheckReport:
    from .fce import FCEParams, enhance
    rng = np.random.default_rng([seed, 2])
    params = FCEParams(6, rng, F64)
    _nudge_biases(params, rng)
    fq, fs = _t(rng, 6, 3, 4), _t(rng, 2, 6, 2, 2)
    wr = rng_fixed(seed)
    wq = Tensor(wr.uniform(0.5, 1.5, size=fq.shape), dtype=F64)
    ws = Tensor(wr.uniform(0.5, 1.5, size=fs.shape), dtype=F64)

    def f():
        eq, es = enhance(fq, fs, params)
        return tsum(mul(eq, wq)) + tsum(mul(es, ws))

    return grad_check(f, [fq, fs] + params.parameters(), EPS, TOL)


def check_similarity(seed: int = 0) -> GradCheckReport:
    from .similarity import cosine_similarity_batch
    rng = np.random.default_rng([seed, 3])
    eq, es = _t(rng, 5, 3, 3), _t(rng, 2, 5, 2, 2)
    # keep cosines away from the relu kink at 0
    es.data = np.abs(es.data) + 0.2
    eq.data = np.abs(eq.data) + 0.2
    return grad_check(lambda: _weighted(cosine_similarity_batch(eq, es), rng_fixed(seed)),
                      [eq, es], EPS, TOL)


def check_slm(seed: int = 0) -> GradCheckReport:
    from .slm import SLMParams, slm_forward
    rng = np.random.default_rng([seed, 4])
    params = SLMParams((2, 2), widths=(4, 4, 4), seed=seed, dtype=F64)
    _nudge_biases(params, rng)
    pyr = [_t(rng, 2, 2, 4, 6, 4, 4, lo=0, hi=1), _t(rng, 2, 2, 2, 3, 4, 4, lo=0, hi=1)]
    return grad_check(lambda: _weighted(slm_forward(pyr, params), rng_fixed(seed)),
                      pyr + params.parameters(), EPS, TOL, max_per_input=6,
                      rng=np.random.default_rng(seed))


def check_decoder(seed: int = 0) -> GradCheckReport:
    from .decoder import DecoderParams, decode
    rng = np.random.default_rng([seed, 5])
    params = DecoderParams(8, n_blocks=2, seed=seed, dtype=F64)
    _nudge_biases(params, rng)
    m = _t(rng, 2, 8, 3, 4, lo=0, hi=1)
    return grad_check(lambda: _weighted(decode(m, params), rng_fixed(seed)),
                      [m] + params.parameters(), EPS, TOL, max_per_input=8,
                      rng=np.random.default_rng(seed))


def check_loss(seed: int = 0) -> GradCheckReport:
    from .loss import mse_loss
    rng = np.random.default_rng([seed, 6])
    pred = _t(rng, 1, 9, 9, lo=0, hi=0.1)
    pts = rng.uniform(1, 8, size=(3, 2))
    return grad_check(lambda: mse_loss(pred, pts, sigma=1.0), [pred], EPS, TOL)


def pipeline_setup(seed: int = 0):
    """Two-group desk model at 64-bit and a 32 x 48 synthetic sample."""
    from .data import SynthConfig, synth_sample
    from .loss import GenLossConfig
    from .model import ModelConfig, SSDModel
    cfg = ModelConfig(width=8, levels=(2, 2), slm_widths=(4, 4, 4), dtype="float64", dis=False,
                      seed=seed)
    model = SSDModel(cfg)
    _nudge_biases(model, np.random.default_rng([seed, 7]))
    sample = synth_sample(SynthConfig(height=32, width=48, size_range=(8, 10),
                                      count_range=(2, 4), distractor_range=(1, 2)), seed)
    return model, sample, GenLossConfig(pool=4)


def check_pipeline(seed: int = 0, max_per_input: int = 2) -> GradCheckReport:
    """Full forward + MSE loss, w.r.t. every parameter tensor (subsampled)."""
    from .loss import mse_loss
    model, sample, _ = pipeline_setup(seed)
    return grad_check(lambda: mse_loss(model.forward(sample).density, sample.points),
                      model.parameters(), EPS, TOL, max_per_input=max_per_input,
                      rng=np.random.default_rng(seed))


MODULE_CHECKS: Dict[str, Callable[[], GradCheckReport]] = {
    "tensor-core": check_tensor_ops,
    "fce": check_fce,
    "similarity": check_similarity,
    "slm": check_slm,
    "decoder": check_decoder,
    "gen-loss": check_loss,
    "pipeline": check_pipeline,
}


def run_checks(names: List[str]) -> Iterator[Tuple[str, GradCheckReport]]:
    for name in names:
        yield name, MODULE_CHECKS[name]()
