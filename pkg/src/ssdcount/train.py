"""Training loop, AdamW, count metrics and run configuration."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import Sample, read_dataset
from .loss import GenLossConfig, generalized_loss, mse_loss
from .model import ModelConfig, SSDModel
from .module import save_checkpoint
from .tensor import NonFiniteError, Tensor, no_grad


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    lr_decay: float = 0.95
    batch_size: int = 4
    epochs: int = 100
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 1e-2
    clip_norm: float = 10.0
    seed: int = 0
    fce: bool = True
    gloss: bool = True
    dis: bool = True
    shots: int = 3
    ot_eps: float = 1e-3
    ot_tau: float = 0.1
    ot_pool: int = 8
    mse_sigma: float = 2.0
    model: Dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0 < self.lr_decay <= 1:
            raise ValueError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.batch_size < 1 or self.shots < 1:
            raise ValueError("batch_size and shots must be >= 1")

    def lr_at(self, epoch: int) -> float:
        """Learning rate used after ``epoch`` completed epochs."""
        return self.lr * self.lr_decay ** epoch

    def model_config(self) -> ModelConfig:
        base = ModelConfig.from_dict({**self.model, "fce": self.fce, "dis": self.dis,
                                      "seed": self.model.get("seed", self.seed)})
        return base

    def loss_config(self) -> GenLossConfig:
        return GenLossConfig(eps=self.ot_eps, tau=self.ot_tau, pool=self.ot_pool)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


# -- metrics ------------------------------------------------------------------

@dataclass
class EvalReport:
    mae: float
    rmse: float
    per_sample: List[Tuple[float, float]]

    def __post_init__(self):
        assert self.rmse >= self.mae - 1e-12 >= -1e-12, (self.mae, self.rmse)


def count_errors(preds: Sequence[float], gts: Sequence[float]) -> EvalReport:
    p = np.asarray(preds, dtype=np.float64)
    g = np.asarray(gts, dtype=np.float64)
    if p.shape != g.shape or p.size == 0:
        raise ValueError("need equal-length, nonempty prediction and ground-truth lists")
    err = p - g
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    rmse = max(rmse, mae)  # float rounding only; equality holds iff all |err| equal
    return EvalReport(mae, rmse, list(zip(g.tolist(), p.tolist())))


def with_shots(s: Sample, k: int) -> Sample:
    if k > s.shots:
        raise ValueError(f"sample {s.name!r} has {s.shots} exemplars, {k} requested")
    return s if k == s.shots else s.with_boxes(s.boxes[:k])


def evaluate(model: SSDModel, dataset: Sequence[Sample], shots: Optional[int] = None
             ) -> EvalReport:
    if not dataset:
        raise ValueError("evaluate needs a nonempty dataset")
    preds, gts = [], []
    with no_grad():
        for s in dataset:
            if shots is not None:
                s = with_shots(s, shots)
            preds.append(model.forward(s).count)
            gts.append(s.count)
    return count_errors(preds, gts)


# -- optimiser ----------------------------------------------------------------

@dataclass
class AdamWState:
    step: int = 0
    m: Dict[int, np.ndarray] = field(default_factory=dict)
    v: Dict[int, np.ndarray] = field(default_factory=dict)
    skipped: int = 0


def adamw_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]],
               state: AdamWState, lr: float, betas=(0.9, 0.999), weight_decay: float = 1e-2,
               eps: float = 1e-8) -> bool:
    """Decoupled-decay AdamW with bias correction. Returns False if skipped."""
    if any(g is not None and not np.isfinite(g).all() for g in grads):
        state.skipped += 1
        return False
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        g = g.astype(np.float64)
        m = state.m.get(i)
        if m is None:
            m = state.m[i] = np.zeros(p.shape)
            state.v[i] = np.zeros(p.shape)
        v = state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        upd = p.data.astype(np.float64) * (1.0 - lr * weight_decay)
        upd -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = upd.astype(p.dtype)
    return True


def clip_global_norm(grads: List[Optional[np.ndarray]], max_norm: float) -> float:
    total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads if g is not None))
    if total > max_norm and np.isfinite(total):
        f = max_norm / (total + 1e-12)
        for i, g in enumerate(grads):
            if g is not None:
                grads[i] = g * f
    return total


# -- training -----------------------------------------------------------------

class TrainingAborted(RuntimeError):
    pass


def sample_loss(model: SSDModel, s: Sample, cfg: TrainConfig):
    r = model.forward(s)
    if cfg.gloss:
        loss, res = generalized_loss(r.density, r.sample.points, cfg.loss_config())
        diag = res.diagnostics()
    else:
        loss, diag = mse_loss(r.density, r.sample.points, cfg.mse_sigma), {}
    return loss, r, diag


def _dump(out: Optional[Path], info: dict) -> None:
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "diagnostics.json").write_text(json.dumps(info, indent=1, default=str))


@dataclass
class TrainResult:
    model: SSDModel
    log: List[dict]
    skipped_steps: int


def train(cfg: TrainConfig, train_set: Sequence[Sample], val_set: Sequence[Sample] = (),
          out: Optional[Path] = None, model: Optional[SSDModel] = None,
          log_fn=None) -> TrainResult:
    """Run ``cfg.epochs`` epochs.  Line ``epoch=0`` evaluates the untrained model."""
    if not train_set:
        raise ValueError("empty training set")
    out = Path(out) if out is not None else None
    train_set = [with_shots(s, cfg.shots) for s in train_set]
    val_set = [with_shots(s, cfg.shots) for s in val_set]
    model = model or SSDModel(cfg.model_config())
    params = [p for p in model.parameters() if p.requires_grad]
    state = AdamWState()
    rng = np.random.default_rng([cfg.seed, 505])
    log: List[dict] = []
    log_path = out / "log.jsonl" if out is not None else None
    if log_path is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path.write_text("")

    def emit(entry: dict) -> None:
        log.append(entry)
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(entry) + "\n")
        if log_fn is not None:
            log_fn(entry)

    def metrics(epoch: int, train_loss, diag) -> dict:
        tr = evaluate(model, train_set)
        entry = {"epoch": epoch, "train_loss": train_loss, "train_mae": tr.mae,
                 "train_rmse": tr.rmse, "val_mae": None, "val_rmse": None,
                 "lr": cfg.lr_at(epoch), "skipped_steps": state.skipped}
        if val_set:
            va = evaluate(model, val_set)
            entry["val_mae"], entry["val_rmse"] = va.mae, va.rmse
        entry.update(diag)
        return entry

    emit(metrics(0, None, {}))
    n = len(train_set)
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at(epoch - 1)
        order = rng.permutation(n)
        losses, ot_its, ot_f = [], [], []
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            model.zero_grad()
            for idx in batch:
                s = train_set[int(idx)]
                try:
                    loss, r, diag = sample_loss(model, s, cfg)
                    if not np.isfinite(loss.item()):
                        raise NonFiniteError(f"loss {loss.item()}")
                    (loss * (1.0 / len(batch))).backward()
                except NonFiniteError as exc:
                    info = {"epoch": epoch, "batch": [int(i) for i in batch],
                            "sample": s.name, "count": s.count,
                            "boxes": [b.as_list() for b in s.boxes], "lr": lr,
                            "error": str(exc)}
                    _dump(out, info)
                    raise TrainingAborted(f"non-finite value in epoch {epoch}, sample "
                                          f"{s.name!r}: {exc}") from exc
                losses.append(loss.item())
                if diag:
                    ot_its.append(diag["ot_iterations"])
                    ot_f.append(diag["ot_final_F"])
            grads = [p.grad for p in params]
            clip_global_norm(grads, cfg.clip_norm)
            adamw_step(params, grads, state, lr, cfg.betas, cfg.weight_decay, cfg.adam_eps)
        diag = {}
        if ot_its:
            diag = {"ot_iterations_mean": float(np.mean(ot_its)), "ot_final_F_mean": float(np.mean(ot_f))}
        emit(metrics(epoch, float(np.mean(losses)), diag))
        if out is not None:
            save_checkpoint(out / "checkpoint", model,
                            {"epoch": epoch, "model": model.cfg.to_dict(), "train": cfg.to_dict()})
    return TrainResult(model, log, state.skipped)


def load_split(directory: Path) -> Tuple[List[Sample], List[Sample]]:
    """``DIR/train`` + ``DIR/val`` if present, else all of ``DIR`` for training."""
    directory = Path(directory)
    if (directory / "train").is_dir():
        val = read_dataset(directory / "val") if (directory / "val").is_dir() else []
        return read_dataset(directory / "train"), val
    return read_dataset(directory), []
