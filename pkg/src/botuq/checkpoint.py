"""JSON checkpoints: model architecture, parameters, batch-norm buffers, optimizer state."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .bnn import BayesianModel
from .engine.optim import OptimizerState

FORMAT = "botuq-checkpoint"
VERSION = 1


def _pack(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}


def _unpack(d: dict) -> np.ndarray:
    return np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])


def save_checkpoint(
    path,
    model: BayesianModel,
    optimizer: OptimizerState | None = None,
    train_config: dict | None = None,
    vocabulary_sidecar: str | None = None,
) -> None:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "model": model.config(),
        "state": {k: _pack(v) for k, v in model.state().items()},
        "optimizer": None,
        "train_config": train_config,
        "vocabulary_sidecar": vocabulary_sidecar,
    }
    if optimizer is not None:
        doc["optimizer"] = {
            "base_lr": optimizer.base_lr,
            "t_max": optimizer.t_max,
            "eta_min": optimizer.eta_min,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
            "step": optimizer.step,
            "m": [_pack(m) for m in optimizer.m],
            "v": [_pack(v) for v in optimizer.v],
        }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[BayesianModel, dict]:
    """Returns the model and the remaining metadata (optimizer state rebuilt if present)."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path}: not a botuq checkpoint")
    if doc.get("version") != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    model = BayesianModel.from_config(doc["model"])
    model.load_state({k: _unpack(v) for k, v in doc["state"].items()})
    meta = {k: doc.get(k) for k in ("train_config", "vocabulary_sidecar")}
    opt = doc.get("optimizer")
    if opt is not None:
        m = [_unpack(a) for a in opt.pop("m")]
        v = [_unpack(a) for a in opt.pop("v")]
        meta["optimizer"] = OptimizerState(**opt, m=m, v=v)
    else:
        meta["optimizer"] = None
    return model, meta
