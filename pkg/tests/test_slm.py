import numpy as np
import pytest

from oracles import dense_masked_4d_conv
from ssdcount.slm import (
    CP4DConvLayer,
    SLMParams,
    cp4d_conv,
    cp4d_output_shape,
    dense_center_pivot_kernel,
    profile,
    slm_forward,
)
from ssdcount.tensor import ShapeError, Tensor

F64 = np.float64


def layer(c_in, c_out, sq, ss, seed=0, k=3):
    return CP4DConvLayer(np.random.default_rng(seed), c_in, c_out, k, sq, ss, F64)


@pytest.mark.parametrize("sq,ss", [(1, 1), (1, 2), (2, 1), (2, 2)])
def test_cp4d_matches_dense_oracle(sq, ss):
    rng = np.random.default_rng(sq * 3 + ss)
    lay = layer(2, 3, sq, ss, seed=sq + ss)
    x = rng.normal(size=(2, 4, 5, 4, 3))
    got = cp4d_conv(Tensor(x, dtype=F64), lay).data
    ref = dense_masked_4d_conv(x, dense_center_pivot_kernel(lay), sq, ss)
    assert got.shape == ref.shape == cp4d_output_shape(x.shape, lay)
    np.testing.assert_allclose(got, ref, atol=1e-12)


def test_small_shape_case():
    lay = layer(1, 1, 1, 1)
    out = cp4d_conv(Tensor(np.ones((1, 4, 4, 2, 2)), dtype=F64), lay)
    assert out.shape == (1, 4, 4, 2, 2)


def test_identity_kernel_passes_input_through():
    lay = layer(1, 1, 1, 1)
    lay.w_query.data[:] = 0
    lay.w_support.data[:] = 0
    lay.w_query.data[0, 0, 1, 1] = 1.0  # only the shared centre tap of one bank
    x = np.random.default_rng(0).normal(size=(1, 3, 3, 3, 3))
    np.testing.assert_allclose(cp4d_conv(Tensor(x, dtype=F64), lay).data, x)


def test_dense_kernel_has_center_pivot_support():
    d = dense_center_pivot_kernel(layer(1, 1, 1, 1))
    mask = np.abs(d[0, 0]) > 0
    for t in zip(*np.nonzero(mask)):
        di, dj, da, db = t
        assert (di, dj) == (1, 1) or (da, db) == (1, 1)
    assert mask.sum() <= 2 * 9 - 1


def test_batched_equals_unbatched():
    rng = np.random.default_rng(5)
    lay = layer(2, 2, 1, 2)
    x = rng.normal(size=(3, 2, 3, 3, 4, 4))
    batched = cp4d_conv(Tensor(x, dtype=F64), lay).data
    for i in range(3):
        np.testing.assert_allclose(batched[i], cp4d_conv(Tensor(x[i], dtype=F64), lay).data)


def test_profile_counts_match_formula():
    lay = layer(2, 4, 1, 2)
    x = Tensor(np.ones((2, 6, 6, 8, 8)), dtype=F64)
    with profile() as prof:
        cp4d_conv(x, lay)
    (rec,) = prof.layers
    assert rec.flops_cp4d == rec.flops_analytic
    assert rec.flops_cp4d / rec.flops_dense_equiv == pytest.approx(2 / 9)


def test_even_kernel_rejected():
    with pytest.raises(ShapeError):
        layer(1, 1, 1, 1, k=2)


def test_channel_mismatch_rejected():
    with pytest.raises(ShapeError):
        cp4d_conv(Tensor(np.zeros((3, 2, 2, 2, 2))), layer(2, 2, 1, 1))


def test_slm_forward_shapes():
    params = SLMParams((2, 3), widths=(4, 4, 8), dtype=F64)
    rng = np.random.default_rng(0)
    pyr = [Tensor(rng.uniform(size=(2, 2, 4, 6, 8, 8)), dtype=F64),
           Tensor(rng.uniform(size=(2, 3, 2, 3, 8, 8)), dtype=F64)]
    out = slm_forward(pyr, params)
    assert out.shape == (2, 8, 4, 6)
    assert np.isfinite(out.data).all() and out.data.min() >= 0


def test_slm_processes_exemplars_independently():
    params = SLMParams((1, 1), widths=(4, 4, 4), dtype=F64)
    rng = np.random.default_rng(1)
    pyr = [rng.uniform(size=(2, 1, 4, 4, 4, 4)), rng.uniform(size=(2, 1, 2, 2, 4, 4))]
    both = slm_forward([Tensor(p, dtype=F64) for p in pyr], params).data
    one = slm_forward([Tensor(p[1:], dtype=F64) for p in pyr], params).data
    np.testing.assert_allclose(both[1:], one, atol=1e-12)


def test_slm_group_count_checked():
    params = SLMParams((1, 1), widths=(4, 4, 4))
    with pytest.raises(ShapeError):
        slm_forward([Tensor(np.zeros((1, 1, 2, 2, 4, 4)))], params)
