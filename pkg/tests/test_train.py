import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssdcount.data import SynthConfig, synth_dataset
from ssdcount.model import load_model
from ssdcount.tensor import Tensor
from ssdcount.train import (
    AdamWState,
    TrainConfig,
    TrainingAborted,
    adamw_step,
    clip_global_norm,
    count_errors,
    evaluate,
    train,
    with_shots,
)

TINY_MODEL = {"width": 8, "levels": [1, 1], "slm_widths": [4, 4, 4]}
TINY_DATA = SynthConfig(height=32, width=48, count_range=(2, 4), size_range=(8, 10),
                        distractor_range=(1, 2))


def test_metrics_hand_cases():
    r = count_errors([12, 18], [10, 20])
    assert abs(r.mae - 2.0) < 1e-9 and abs(r.rmse - 2.0) < 1e-9
    r = count_errors([13, 10], [10, 10])
    assert abs(r.mae - 1.5) < 1e-9 and abs(r.rmse - math.sqrt(4.5)) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1e4), st.floats(0, 1e4)), min_size=1, max_size=30))
def test_rmse_dominates_mae(pairs):
    p, g = zip(*pairs)
    r = count_errors(p, g)
    assert r.rmse >= r.mae


def test_metrics_reject_bad_input():
    with pytest.raises(ValueError):
        count_errors([], [])
    with pytest.raises(ValueError):
        count_errors([1.0], [1.0, 2.0])


def test_adamw_first_step_hand_case():
    # bias-corrected first step moves each coordinate by lr * sign(g), after decay
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True, dtype=np.float64)
    st_ = AdamWState()
    adamw_step([p], [np.array([0.5, -3.0])], st_, lr=0.1, weight_decay=0.01, eps=0.0)
    np.testing.assert_allclose(p.data, [1.0 * (1 - 0.001) - 0.1, -2.0 * (1 - 0.001) + 0.1])


def test_adamw_zero_gradient_only_decays():
    p = Tensor(np.array([4.0]), requires_grad=True, dtype=np.float64)
    st_ = AdamWState()
    for _ in range(3):
        adamw_step([p], [np.zeros(1)], st_, lr=0.5, weight_decay=0.1)
    np.testing.assert_allclose(p.data, [4.0 * 0.95 ** 3])


def test_adamw_skips_nonfinite_gradients():
    p = Tensor(np.array([1.0]), requires_grad=True, dtype=np.float64)
    st_ = AdamWState()
    assert not adamw_step([p], [np.array([np.nan])], st_, lr=0.1)
    assert st_.skipped == 1 and st_.step == 0 and p.data[0] == 1.0


def test_clip_global_norm():
    grads = [np.array([3.0]), np.array([4.0])]
    total = clip_global_norm(grads, 1.0)
    assert total == pytest.approx(5.0)
    assert math.hypot(grads[0][0], grads[1][0]) == pytest.approx(1.0)


def test_learning_rate_schedule():
    cfg = TrainConfig(lr=1e-4, lr_decay=0.95)
    assert cfg.lr_at(0) == 1e-4
    assert cfg.lr_at(10) == pytest.approx(1e-4 * 0.95 ** 10)


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"lr": 1e-3, "learning_rate": 1})
    cfg = TrainConfig(epochs=3, fce=False, model=TINY_MODEL)
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_with_shots():
    s = synth_dataset(TINY_DATA, 1)[0]
    assert with_shots(s, 1).shots == 1
    with pytest.raises(ValueError):
        with_shots(s, 5)


def tiny_cfg(**kw):
    base = dict(epochs=2, batch_size=2, lr=1e-3, model=TINY_MODEL, ot_pool=4)
    base.update(kw)
    return TrainConfig(**base)


def test_training_is_deterministic_and_checkpoints(tmp_path):
    data = synth_dataset(TINY_DATA, 4, seed=1)
    r1 = train(tiny_cfg(), data, data[:2], out=tmp_path / "a")
    r2 = train(tiny_cfg(), data, data[:2], out=tmp_path / "b")
    assert (tmp_path / "a" / "log.jsonl").read_bytes() == (tmp_path / "b" / "log.jsonl").read_bytes()
    assert [e["epoch"] for e in r1.log] == [0, 1, 2]
    assert {"train_mae", "val_mae", "lr", "skipped_steps", "ot_iterations_mean"} <= set(r1.log[-1])
    model, meta = load_model(tmp_path / "a" / "checkpoint")
    assert meta["epoch"] == 2
    assert evaluate(model, data).mae == pytest.approx(evaluate(r2.model, data).mae, abs=1e-6)


def test_mse_branch_runs():
    data = synth_dataset(TINY_DATA, 2, seed=2)
    res = train(tiny_cfg(epochs=1, gloss=False), data)
    assert res.log[-1]["train_loss"] is not None and "ot_iterations_mean" not in res.log[-1]


def test_training_aborts_with_diagnostics(tmp_path, monkeypatch):
    import ssdcount.train as tr
    data = synth_dataset(TINY_DATA, 2, seed=3)

    def boom(model, s, cfg):
        loss, r, diag = orig(model, s, cfg)
        return loss * float("nan"), r, diag

    orig = tr.sample_loss
    monkeypatch.setattr(tr, "sample_loss", boom)
    with pytest.raises(TrainingAborted):
        with np.errstate(invalid="ignore"):
            train(tiny_cfg(epochs=1), data, out=tmp_path)
    info = json.loads((tmp_path / "diagnostics.json").read_text())
    assert {"epoch", "sample", "boxes", "lr"} <= set(info)
