"""Command-line entry point: synth, train, eval, predict, gradcheck."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import List, Optional


def _apply_thread_cap() -> None:
    n = os.environ.get("SSD_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


def _size(text: str):
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")


def cmd_synth(args) -> int:
    from dataclasses import replace
    from .data import SynthConfig, split_configs, synth_dataset, write_dataset
    h, w = args.size
    base = SynthConfig(height=h, width=w, shots=args.shots)
    out = Path(args.out)
    if args.split:
        tc, vc = split_configs(base)
        write_dataset(out / "train", synth_dataset(tc, args.n, seed=args.seed))
        write_dataset(out / "val", synth_dataset(vc, args.n_val or max(args.n // 2, 1),
                                                 seed=args.seed + 1))
    else:
        write_dataset(out, synth_dataset(replace(base), args.n, seed=args.seed))
    print(json.dumps({"out": str(out), "n": args.n, "split": bool(args.split)}))
    return 0


def _train_config(args):
    from .train import TrainConfig
    d = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.no_fce:
        d["fce"] = False
    if args.loss:
        d["gloss"] = args.loss == "generalized"
    if args.no_dis:
        d["dis"] = False
    if args.shots:
        d["shots"] = args.shots
    if args.epochs is not None:
        d["epochs"] = args.epochs
    return TrainConfig.from_dict(d)


def cmd_train(args) -> int:
    from .train import load_split, train
    cfg = _train_config(args)
    tr, va = load_split(Path(args.data))
    res = train(cfg, tr, va, out=Path(args.out),
                log_fn=lambda e: print(json.dumps(e), flush=True))
    print(json.dumps({"checkpoint": str(Path(args.out) / "checkpoint"),
                      "skipped_steps": res.skipped_steps}))
    return 0


def cmd_eval(args) -> int:
    from .data import read_dataset
    from .model import load_model
    from .train import evaluate
    model, meta = load_model(Path(args.ckpt))
    data = Path(args.data)
    if (data / "val").is_dir() and not list(data.glob("*.json")):
        data = data / "val"
    rep = evaluate(model, read_dataset(data), shots=args.shots)
    print(json.dumps({"mae": rep.mae, "rmse": rep.rmse, "n": len(rep.per_sample),
                      "per_sample": rep.per_sample}))
    return 0


def cmd_predict(args) -> int:
    from .data import export_density_pgm, read_sample
    from .model import load_model
    from .slm import profile
    from .tensor import io as tio
    from .tensor import no_grad
    model, _ = load_model(Path(args.ckpt))
    sample = read_sample(Path(args.sample))
    with no_grad(), profile() as prof:
        res = model.forward(sample)
    tio.save(args.out, res.density.data)
    report = {"count": res.count, "scale": res.scale, "out": args.out}
    if args.pgm:
        report["pgm"] = export_density_pgm(args.pgm, res.density.data)
    if args.dump_similarity:
        d = Path(args.dump_similarity)
        d.mkdir(parents=True, exist_ok=True)
        names = []
        for p, block in enumerate(res.similarity, start=1):
            for k in range(block.shape[0]):
                name = f"S{p}_k{k + 1}.ssdt"
                tio.save(d / name, block.data[k])
                names.append(name)
        report["similarity"] = names
    if args.profile:
        layers = prof.as_json()
        report["profile"] = {"layers": layers,
                             "flops_cp4d": sum(l["flops_cp4d"] for l in layers),
                             "flops_dense_equiv": sum(l["flops_dense_equiv"] for l in layers)}
    print(json.dumps(report))
    return 0


def cmd_gradcheck(args) -> int:
    from .verify import MODULE_CHECKS, run_checks
    names = [args.module] if args.module else list(MODULE_CHECKS)
    unknown = [n for n in names if n not in MODULE_CHECKS]
    if unknown:
        print(f"unknown module {unknown[0]!r}; choose from {sorted(MODULE_CHECKS)}",
              file=sys.stderr)
        return 2
    ok = True
    for name, rep in run_checks(names):
        print(json.dumps({"module": name, "max_rel_err": rep.max_rel_err,
                          "n_checked": rep.n_checked, "passed": rep.passed}))
        ok &= rep.passed
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ssdcount")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=_size, default=(128, 192))
    s.add_argument("--shots", type=int, default=3)
    s.add_argument("--split", action="store_true", help="write train/ and val/ with disjoint categories")
    s.add_argument("--n-val", type=int, default=None)
    s.set_defaults(fn=cmd_synth)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", default=None)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--no-fce", action="store_true")
    t.add_argument("--loss", choices=("generalized", "mse"), default=None)
    t.add_argument("--no-dis", action="store_true")
    t.add_argument("--shots", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="MAE / RMSE of a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--shots", type=int, default=None)
    e.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="density map for one sample")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--sample", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pgm", default=None)
    p.add_argument("--dump-similarity", default=None)
    p.add_argument("--profile", action="store_true")
    p.set_defaults(fn=cmd_predict)

    g = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    g.add_argument("--module", default=None)
    g.set_defaults(fn=cmd_gradcheck)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    _apply_thread_cap()
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
