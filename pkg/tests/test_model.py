import json

import numpy as np
import pytest

from ssdcount.data import SynthConfig, synth_sample, write_pyramid
from ssdcount.data.files import sample_to_json
from ssdcount.data import read_sample
from ssdcount.model import ModelConfig, SSDModel, stage_hash
from ssdcount.tensor import ShapeError, Tensor, no_grad

SMALL = dict(width=8, levels=(2, 2), slm_widths=(4, 4, 4), dtype="float64")
SCENE = SynthConfig(height=32, width=48, count_range=(3, 5), size_range=(9, 11),
                    distractor_range=(1, 2))


@pytest.fixture(scope="module")
def sample():
    return synth_sample(SCENE, 4)


def lively(model):
    """Positive biases so untrained ReLUs pass signal and the density varies."""
    for name, p in model.named_parameters():
        if not name.startswith("fce") and (name.endswith("bias") or name.endswith("gn_beta")):
            p.data = p.data + 0.5
    return model


def forward(model, s, **kw):
    with no_grad():
        return model.forward(s, **kw)


def test_forward_shapes_and_count(sample):
    model = SSDModel(ModelConfig(**SMALL, dis=False))
    r = forward(model, sample)
    assert r.density.shape == (1, 32, 48)
    assert r.per_exemplar.shape == (3, 1, 32, 48)
    assert [s.shape[:2] for s in r.similarity] == [(3, 2), (3, 2)]
    assert r.count == pytest.approx(r.density.data.sum())
    assert r.density.data.min() >= 0


def test_float32_end_to_end(sample):
    r = forward(SSDModel(ModelConfig(width=8, levels=(1, 1), slm_widths=(4, 4, 4))), sample)
    assert r.density.dtype == np.float32


def test_trace_hashes_change_with_fce_toggle(sample):
    on = forward(SSDModel(ModelConfig(**SMALL, dis=False)), sample, trace=True).trace
    off = forward(SSDModel(ModelConfig(**SMALL, dis=False, fce=False)), sample, trace=True).trace
    assert set(on) == {"input", "backbone", "exemplars", "enhanced", "similarity", "slm", "density"}
    assert on["backbone"] == off["backbone"] and on["exemplars"] == off["exemplars"]


def test_fresh_fce_is_identity_so_toggle_only_matters_after_training(sample):
    on = lively(SSDModel(ModelConfig(**SMALL, dis=False)))
    off = lively(SSDModel(ModelConfig(**SMALL, dis=False, fce=False)))
    assert forward(on, sample).count > 0
    np.testing.assert_array_equal(forward(on, sample).density.data, forward(off, sample).density.data)
    for g in on.fce:
        for p in g:
            p.trans_q.weight.data[:] = 0.05
    a, b = forward(on, sample, trace=True), forward(off, sample, trace=True)
    assert a.trace["similarity"] != b.trace["similarity"]
    assert not np.allclose(a.density.data, b.density.data)


def perturb_fce(model, seed=0):
    rng = np.random.default_rng(seed)
    for g in model.fce:
        for p in g:
            for _, t in p.named_parameters():
                t.data = t.data + rng.normal(scale=0.1, size=t.shape)


def test_exemplar_permutation_invariance(sample):
    model = lively(SSDModel(ModelConfig(**SMALL, dis=False)))
    perturb_fce(model)
    base = forward(model, sample).density.data
    assert base.sum() > 0
    for perm in ([1, 0, 2], [2, 1, 0], [1, 2, 0]):
        s2 = sample.with_boxes([sample.boxes[i] for i in perm])
        np.testing.assert_allclose(forward(model, s2).density.data, base, atol=1e-10)


def test_single_exemplar_equals_its_branch(sample):
    model = lively(SSDModel(ModelConfig(**SMALL, dis=False, fce=False)))
    full = forward(model, sample)
    one = forward(model, sample.with_boxes(sample.boxes[1:2]))
    np.testing.assert_array_equal(one.density.data, full.per_exemplar.data[1])


def test_dis_upscales_small_exemplars(sample):
    model = SSDModel(ModelConfig(**SMALL, dis=True, dis_gamma=32.0))
    r = forward(model, sample)
    assert r.scale > 1
    assert r.sample.image_size[0] > 32
    assert r.density.shape[-2:] == r.sample.image_size
    off = forward(SSDModel(ModelConfig(**SMALL, dis=False)), sample)
    assert off.scale == 1.0


def test_stage_hash_stable():
    t = Tensor(np.arange(4.0))
    assert stage_hash(t) == stage_hash(np.arange(4.0)) != stage_hash(np.arange(4.0) + 1)


def test_precomputed_features_match_image_path(tmp_path, sample):
    model = lively(SSDModel(ModelConfig(**SMALL, dis=False)))
    with no_grad():
        pyr = model.backbone(Tensor(sample.image, dtype=np.float64))
    write_pyramid(tmp_path / "feat", pyr, sample.image_size)
    ann = sample_to_json(sample, "feat/manifest.json")
    (tmp_path / "s.json").write_text(json.dumps(ann))
    feat_sample = read_sample(tmp_path / "s.json")
    a = forward(model, sample).density.data
    b = forward(model, feat_sample).density.data
    np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-8)


def test_feature_level_mismatch_rejected(tmp_path, sample):
    other = SSDModel(ModelConfig(width=8, levels=(1, 1), slm_widths=(4, 4, 4), dtype="float64"))
    with no_grad():
        pyr = other.backbone(Tensor(sample.image, dtype=np.float64))
    write_pyramid(tmp_path / "feat", pyr, sample.image_size)
    (tmp_path / "s.json").write_text(json.dumps(sample_to_json(sample, "feat/manifest.json")))
    with pytest.raises(ShapeError):
        forward(SSDModel(ModelConfig(**SMALL)), read_sample(tmp_path / "s.json"))


def test_config_round_trip():
    cfg = ModelConfig(**SMALL, fce_per_level=True)
    assert ModelConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    model = SSDModel(cfg)
    assert len(model.fce[0]) == 2
