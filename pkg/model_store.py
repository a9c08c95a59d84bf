"""
Model and ground-truth factor files
JSON documents with full-precision numbers; floats are written with their exact round-trip repr
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict

import numpy as np

from dataseq import FactorSet
from ekf import NoiseConfig, TemporalFactors
from errors import ConfigError, DataError
from trainer import HyperParams, TrainedModel

logger = logging.getLogger(__name__)

MODEL_FORMAT = "eklf-model/1"
FACTORS_FORMAT = "eklf-factors/1"


def hyper_to_dict(hyper: HyperParams) -> Dict[str, Any]:
    return hyper.to_dict()


def hyper_from_dict(data: Dict[str, Any]) -> HyperParams:
    values = dict(data)
    values["noise"] = NoiseConfig(**values.get("noise", {}))
    return HyperParams(**values)


def model_to_dict(model: TrainedModel) -> Dict[str, Any]:
    return {
        "format": MODEL_FORMAT,
        "kind": model.kind,
        "dims": {"nodes": model.nodes, "slots": model.slots},
        "hyper": hyper_to_dict(model.hyper),
        "best_iteration": model.best_iteration,
        "iterations_run": model.iterations_run,
        "elapsed_seconds": model.elapsed_seconds,
        "n": model.n.slots.tolist(),
        "q": model.q.tolist(),
    }


def save_model(model: TrainedModel, path) -> None:
    path = Path(path)
    try:
        with open(path, "w") as f:
            json.dump(model_to_dict(model), f, indent=2)
        logger.info(f"Model saved to {path}")
    except OSError as e:
        logger.error(f"Error saving model: {e}")
        raise


def load_model(path) -> TrainedModel:
    """Rebuild a TrainedModel; history is not stored, only its length"""
    path = Path(path)
    with open(path, "r") as f:
        try:
            data = json.load(f)
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise DataError(f"{path} is not a readable JSON file: {e}", file=str(path))
    if not isinstance(data, dict) or data.get("format") != MODEL_FORMAT:
        raise DataError(f"{path} is not an EKLF model file", file=str(path))

    try:
        model = _model_from_dict(data)
    except DataError as e:
        raise e.add_context(file=str(path))
    except (ConfigError, KeyError, TypeError, ValueError) as e:
        logger.error(f"Error reading model {path}: {e!r}")
        raise DataError(f"{path} has unreadable model content: {e!r}", file=str(path))
    logger.info(f"Loaded {model.kind} model from {path} (M={model.nodes}, T={model.slots})")
    return model


def _model_from_dict(data: Dict[str, Any]) -> TrainedModel:
    nodes, slots = int(data["dims"]["nodes"]), int(data["dims"]["slots"])
    n = np.asarray(data["n"], dtype=float)
    q = np.asarray(data["q"], dtype=float)
    if n.ndim != 3 or n.shape[:2] != (slots, nodes) or q.shape != (nodes, n.shape[2]):
        raise DataError(f"factor shapes N {n.shape}, Q {q.shape} do not match dims")

    return TrainedModel(
        kind=data["kind"],
        n=TemporalFactors(n),
        q=q,
        nodes=nodes,
        slots=slots,
        hyper=hyper_from_dict(data["hyper"]),
        best_iteration=data.get("best_iteration", 0),
        iterations_run=data.get("iterations_run", 0),
        elapsed_seconds=data.get("elapsed_seconds", 0.0),
    )


def save_factor_set(factors: FactorSet, path) -> None:
    path = Path(path)
    with open(path, "w") as f:
        json.dump({"format": FACTORS_FORMAT, "n": factors.n.tolist(), "q": factors.q.tolist()}, f, indent=2)
    logger.info(f"Ground-truth factors saved to {path}")


def load_factor_set(path) -> FactorSet:
    path = Path(path)
    with open(path, "r") as f:
        data = json.load(f)
    if data.get("format") != FACTORS_FORMAT:
        raise DataError(f"{path} is not a factor file", file=str(path))
    return FactorSet(n=np.asarray(data["n"], dtype=float), q=np.asarray(data["q"], dtype=float))
