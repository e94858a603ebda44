import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ssdcount.similarity import build_pyramid, cosine_similarity_4d, cosine_similarity_batch
from ssdcount.tensor import ShapeError, Tensor

F64 = np.float64


def cosine_oracle(eq, es):
    c, h, w = eq.shape
    _, eh, ew = es.shape
    out = np.zeros((h, w, eh, ew))
    for i in range(h):
        for j in range(w):
            for a in range(eh):
                for b in range(ew):
                    u, v = eq[:, i, j], es[:, a, b]
                    out[i, j, a, b] = max(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)), 0.0)
    return out


def test_cosine_matches_loop_oracle():
    rng = np.random.default_rng(0)
    eq, es = rng.normal(size=(5, 3, 4)), rng.normal(size=(5, 2, 3))
    got = cosine_similarity_4d(Tensor(eq, dtype=F64), Tensor(es, dtype=F64)).data
    np.testing.assert_allclose(got, cosine_oracle(eq, es), atol=1e-12)


def test_batch_layout_is_exemplar_first():
    rng = np.random.default_rng(1)
    eq = Tensor(rng.normal(size=(4, 3, 3)), dtype=F64)
    es = rng.normal(size=(2, 4, 2, 2))
    batch = cosine_similarity_batch(eq, Tensor(es, dtype=F64)).data
    assert batch.shape == (2, 3, 3, 2, 2)
    for k in range(2):
        np.testing.assert_allclose(batch[k], cosine_similarity_4d(eq, Tensor(es[k], dtype=F64)).data)


def test_identical_features_give_one():
    v = np.random.default_rng(2).uniform(0.1, 1, size=(6, 1, 1))
    s = cosine_similarity_4d(Tensor(v, dtype=F64), Tensor(v, dtype=F64)).data
    assert s.item() == pytest.approx(1.0)


def test_zero_vectors_are_finite():
    s = cosine_similarity_4d(Tensor(np.zeros((3, 2, 2)), dtype=F64),
                             Tensor(np.ones((3, 1, 1)), dtype=F64)).data
    np.testing.assert_array_equal(s, 0.0)


finite = st.floats(-10, 10, allow_nan=False, width=64)


@settings(max_examples=60, deadline=None)
@given(arrays(F64, (4, 3, 3), elements=finite), arrays(F64, (4, 2, 2), elements=finite),
       st.floats(0.01, 100), st.floats(0.01, 100))
def test_range_and_positive_scale_invariance(eq, es, a, b):
    s = cosine_similarity_4d(Tensor(eq, dtype=F64), Tensor(es, dtype=F64)).data
    assert s.min() >= 0 and s.max() <= 1 + 1e-12
    tiny = (np.linalg.norm(eq, axis=0).min() < 1e-3) or (np.linalg.norm(es, axis=0).min() < 1e-3)
    if not tiny:
        s2 = cosine_similarity_4d(Tensor(a * eq, dtype=F64), Tensor(b * es, dtype=F64)).data
        np.testing.assert_allclose(s, s2, atol=1e-5)


def test_build_pyramid_shapes_and_single_branch():
    rng = np.random.default_rng(3)
    qg = [[Tensor(rng.normal(size=(4, 4, 6)), dtype=F64) for _ in range(2)],
          [Tensor(rng.normal(size=(8, 2, 3)), dtype=F64) for _ in range(3)]]
    sg = [[Tensor(rng.normal(size=(3, 4, 2, 2)), dtype=F64) for _ in range(2)],
          [Tensor(rng.normal(size=(3, 8, 2, 2)), dtype=F64) for _ in range(3)]]
    pyr = build_pyramid(qg, sg)
    assert [p.shape for p in pyr] == [(3, 2, 4, 6, 2, 2), (3, 3, 2, 3, 2, 2)]
    single = build_pyramid(qg, sg, k=1)
    for full, one in zip(pyr, single):
        np.testing.assert_array_equal(full.data[1], one.data)


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        cosine_similarity_batch(Tensor(np.zeros((3, 2, 2))), Tensor(np.zeros((1, 4, 2, 2))))
