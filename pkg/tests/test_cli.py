import json

import numpy as np
import pytest

from ssdcount.cli import main
from ssdcount.tensor import io as tio


def run(capsys, *argv):
    code = main(list(argv))
    lines = [l for l in capsys.readouterr().out.splitlines() if l.strip()]
    return code, [json.loads(l) for l in lines]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


def test_synth_train_eval_predict(workdir, capsys):
    data = workdir / "data"
    code, out = run(capsys, "synth", "--out", str(data), "--n", "3", "--size", "32x48",
                    "--split", "--n-val", "2", "--seed", "4")
    assert code == 0 and out[-1]["split"] is True
    assert len(list((data / "train").glob("*.json"))) == 3
    assert len(list((data / "val").glob("*.ppm"))) == 2

    cfg = workdir / "cfg.json"
    cfg.write_text(json.dumps({"lr": 1e-3, "batch_size": 2, "ot_pool": 4,
                               "model": {"width": 8, "levels": [1, 1], "slm_widths": [4, 4, 4]}}))
    run_dir = workdir / "run"
    code, out = run(capsys, "train", "--config", str(cfg), "--data", str(data), "--out",
                    str(run_dir), "--epochs", "1", "--no-dis", "--shots", "2")
    assert code == 0
    assert [e["epoch"] for e in out[:-1]] == [0, 1]
    assert (run_dir / "log.jsonl").read_text().count("\n") == 2
    ckpt = run_dir / "checkpoint"
    meta = json.loads((ckpt / "meta.json").read_text())
    assert meta["train"]["shots"] == 2 and meta["model"]["dis"] is False

    code, out = run(capsys, "eval", "--ckpt", str(ckpt), "--data", str(data), "--shots", "1")
    assert code == 0 and out[0]["n"] == 2 and out[0]["rmse"] >= out[0]["mae"]

    sample = sorted((data / "val").glob("*.json"))[0]
    dens = workdir / "dens.ssdt"
    code, out = run(capsys, "predict", "--ckpt", str(ckpt), "--sample", str(sample), "--out",
                    str(dens), "--pgm", str(workdir / "dens.pgm"), "--dump-similarity",
                    str(workdir / "sim"), "--profile")
    rep = out[0]
    assert code == 0
    arr = tio.load(dens)
    assert arr.shape == (1, 32, 48) and arr.sum() == pytest.approx(rep["count"], rel=1e-5)
    assert (workdir / "dens.pgm").exists() and (workdir / "dens.pgm.json").exists()
    assert "S1_k1.ssdt" in rep["similarity"] and "S2_k3.ssdt" in rep["similarity"]
    assert tio.load(workdir / "sim" / "S1_k1.ssdt").ndim == 5
    prof = rep["profile"]
    assert prof["flops_cp4d"] <= 0.25 * prof["flops_dense_equiv"]
    assert all(set(l) >= {"layer", "flops_cp4d", "flops_analytic"} for l in prof["layers"])


def test_train_loss_and_fce_toggles(workdir, capsys):
    data = workdir / "toggle"
    run(capsys, "synth", "--out", str(data), "--n", "2", "--size", "32x48")
    cfg = workdir / "cfg2.json"
    cfg.write_text(json.dumps({"batch_size": 2, "model": {"width": 8, "levels": [1, 1],
                                                          "slm_widths": [4, 4, 4]}}))
    code, out = run(capsys, "train", "--config", str(cfg), "--data", str(data), "--out",
                    str(workdir / "t2"), "--epochs", "1", "--loss", "mse", "--no-fce")
    assert code == 0
    meta = json.loads((workdir / "t2" / "checkpoint" / "meta.json").read_text())
    assert meta["train"]["gloss"] is False and meta["model"]["fce"] is False
    assert np.isfinite(out[-2]["train_loss"])


def test_gradcheck_subcommand(capsys):
    code, out = run(capsys, "gradcheck", "--module", "similarity")
    assert code == 0 and out[0]["passed"] and out[0]["max_rel_err"] < 1e-4


def test_gradcheck_unknown_module(capsys):
    assert main(["gradcheck", "--module", "nope"]) == 2


def test_bad_size_argument():
    with pytest.raises(SystemExit):
        main(["synth", "--out", "x", "--n", "1", "--size", "big"])
