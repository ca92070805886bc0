"""Model checkpoints: a magic header line followed by JSON.

Floats are written with ``repr`` so parameters round-trip exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .energy import EnergySurvivalModel, QuadratureConfig, Standardizer
from .net import MlpConfig, MlpParams

MAGIC = "SNAPSURV-CHECKPOINT"
VERSION = 1

__all__ = ["save_checkpoint", "load_checkpoint", "model_to_dict", "model_from_dict", "CheckpointError"]


class CheckpointError(ValueError):
    pass


def model_to_dict(model: EnergySurvivalModel) -> dict:
    cfg = model.params.config
    return {
        "network": {
            "input_dim": cfg.input_dim,
            "hidden_layers": list(cfg.hidden_layers),
            "activation": cfg.activation,
            "dropout_rate": cfg.dropout_rate,
            "init_seed": cfg.init_seed,
        },
        "theta": [float(v) for v in model.params.theta],
        "standardizer": {
            "mean": [float(v) for v in model.standardizer.mean],
            "scale": [float(v) for v in model.standardizer.scale],
        },
        "quadrature": {
            "t_upper": float(model.quadrature.t_upper),
            "num_points": int(model.quadrature.num_points),
            "rule": model.quadrature.rule,
        },
        "mode": model.mode,
    }


def model_from_dict(d: dict) -> EnergySurvivalModel:
    net = d["network"]
    cfg = MlpConfig(net["input_dim"], tuple(net["hidden_layers"]), net["activation"],
                    net["dropout_rate"], net["init_seed"])
    params = MlpParams(cfg, np.array(d["theta"], dtype=np.float64))
    st = Standardizer(np.array(d["standardizer"]["mean"]), np.array(d["standardizer"]["scale"]))
    q = d["quadrature"]
    quad = QuadratureConfig(q["t_upper"], q["num_points"], q["rule"])
    return EnergySurvivalModel(params, quad, st, d["mode"])


def save_checkpoint(path, model: EnergySurvivalModel, metadata: dict | None = None) -> None:
    payload = model_to_dict(model)
    payload["metadata"] = metadata or {}
    text = f"{MAGIC} {VERSION}\n" + json.dumps(payload, sort_keys=True) + "\n"
    Path(path).write_text(text)


def load_checkpoint(path) -> tuple[EnergySurvivalModel, dict]:
    text = Path(path).read_text()
    header, _, body = text.partition("\n")
    parts = header.split()
    if len(parts) != 2 or parts[0] != MAGIC:
        raise CheckpointError(f"{path}: not a snapsurv checkpoint")
    if int(parts[1]) != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {parts[1]}")
    payload = json.loads(body)
    return model_from_dict(payload), payload.get("metadata", {})
