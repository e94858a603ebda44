"""Minimal parameter containers and checkpoint serialization."""

from __future__ import annotations

import json
import os
import shutil
from pathlib import Path
from typing import Dict, Iterator, Tuple

import numpy as np

from .tensor import Tensor
from .tensor import io as tio


class Module:
    """Anything holding parameter Tensors, possibly nested in lists or sub-modules.

    Every Tensor attribute is a parameter; frozen ones just have
    ``requires_grad`` switched off.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            yield from _walk(value, f"{prefix}{name}")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: v.data for k, v in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)[:5]}")
        for k, p in params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _walk(value, path: str):
    if isinstance(value, Tensor):
        yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=path + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{path}.{i}")


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def zeros_param(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def save_checkpoint(path, module: Module, meta: dict) -> None:
    """Write one SSDT file per parameter plus ``meta.json``; replaces ``path`` atomically."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    names = []
    for name, p in module.named_parameters():
        tio.save(tmp / f"{name}.ssdt", p.data)
        names.append(name)
    with open(tmp / "meta.json", "w") as fh:
        json.dump({**meta, "parameters": names}, fh, indent=1, sort_keys=True)
    if path.exists():
        old = path.with_name(path.name + ".old")
        if old.exists():
            shutil.rmtree(old)
        os.replace(path, old)
        os.replace(tmp, path)
        shutil.rmtree(old)
    else:
        os.replace(tmp, path)


def load_checkpoint(path) -> Tuple[dict, Dict[str, np.ndarray]]:
    path = Path(path)
    with open(path / "meta.json") as fh:
        meta = json.load(fh)
    state = {name: tio.load(path / f"{name}.ssdt") for name in meta["parameters"]}
    return meta, state
