"""Checkpoint persistence: versioned structured text (JSON).

Floats are serialized with Python's shortest round-trip decimal
representation, so a saved model reloads with bit-identical weights and
therefore bit-identical forward outputs on the same platform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig, dump_config, parse_config
from .model import LdmModel

__all__ = ["FORMAT_VERSION", "Checkpoint", "CheckpointError",
           "save_checkpoint", "load_checkpoint"]

FORMAT_VERSION = 1

_WEIGHT_ORDER = ("w1", "b1", "w2", "b2")


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    model: LdmModel
    config: ExperimentConfig
    step: int
    seed: int
    n_bins: int | None


def save_checkpoint(path: str, model: LdmModel, config: ExperimentConfig,
                    step: int, n_bins: int | None = None) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "config": dump_config(config),
        "model": {
            "input_dim": model.input_dim,
            "hidden_units": model.hidden_units,
            "state_count": model.state_count,
            "mem_size": model.mem_size,
        },
        "step": int(step),
        "seed": int(config.train.seed),
        "n_bins": n_bins,
        "weights": {name: getattr(model, name).tolist()
                    for name in _WEIGHT_ORDER},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from None
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"corrupt checkpoint {path}: missing format version")
    version = payload["format_version"]
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {version} "
            f"(this build reads version {FORMAT_VERSION})")
    try:
        hyper = payload["model"]
        weights = {name: np.asarray(payload["weights"][name], dtype=np.float64)
                   for name in _WEIGHT_ORDER}
        model = LdmModel(
            input_dim=int(hyper["input_dim"]),
            hidden_units=int(hyper["hidden_units"]),
            state_count=int(hyper["state_count"]),
            mem_size=int(hyper["mem_size"]),
            **weights,
        )
        config = parse_config(payload["config"])
        step = int(payload["step"])
        seed = int(payload["seed"])
        n_bins = payload.get("n_bins")
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(
            f"corrupt checkpoint {path} (format version {version}): {exc}"
        ) from None
    expected = {
        "w1": (model.n_inputs, model.hidden_units),
        "b1": (model.hidden_units,),
        "w2": (model.hidden_units, model.n_outputs),
        "b2": (model.n_outputs,),
    }
    for name, shape in expected.items():
        if weights[name].shape != shape:
            raise CheckpointError(
                f"corrupt checkpoint {path} (format version {version}): "
                f"{name} has shape {weights[name].shape}, expected {shape}")
    return Checkpoint(model=model, config=config, step=step, seed=seed,
                      n_bins=n_bins)
