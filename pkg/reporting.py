"""
Run reports
Machine-readable JSON summaries of every CLI run, plus CSV emission of per-iteration history
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from dataseq import DatasetStats
from trainer import EvalReport, IterationRecord, TrainedModel

logger = logging.getLogger(__name__)

TIMING_KEYS = ("elapsed_seconds", "total_seconds", "time_to_best_rmse", "time_to_best_mae")
HISTORY_FIELDS = [
    "iteration",
    "train_rmse",
    "val_rmse",
    "val_mae",
    "objective_before_q",
    "objective_after_q",
    "elapsed_seconds",
]


@dataclass
class ModelSummary:
    """Evaluation of one trained model together with its training history"""
    kind: str
    evaluation: Optional[EvalReport]
    history: List[IterationRecord] = field(default_factory=list)
    best_iteration: int = 0
    iterations_run: int = 0
    time_to_best_rmse: float = 0.0
    time_to_best_mae: float = 0.0
    elapsed_seconds: float = 0.0

    @classmethod
    def from_model(cls, model: TrainedModel, evaluation: Optional[EvalReport] = None) -> "ModelSummary":
        return cls(
            kind=model.kind,
            evaluation=evaluation,
            history=list(model.history),
            best_iteration=model.best_iteration,
            iterations_run=model.iterations_run,
            time_to_best_rmse=model.time_to_best_rmse,
            time_to_best_mae=model.time_to_best_mae,
            elapsed_seconds=model.elapsed_seconds,
        )

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "kind": self.kind,
            "rmse": self.evaluation.rmse if self.evaluation else None,
            "mae": self.evaluation.mae if self.evaluation else None,
            "count": self.evaluation.count if self.evaluation else 0,
            "best_iteration": self.best_iteration,
            "iterations_run": self.iterations_run,
            "elapsed_seconds": self.elapsed_seconds,
            "time_to_best_rmse": self.time_to_best_rmse,
            "time_to_best_mae": self.time_to_best_mae,
            "history": [r.to_dict() for r in self.history],
        }
        return data


@dataclass
class RunReport:
    command: str
    config: Dict[str, Any]
    seed: int
    stats: Optional[DatasetStats] = None
    models: List[ModelSummary] = field(default_factory=list)
    grid: List[Dict[str, float]] = field(default_factory=list)
    total_seconds: float = 0.0

    @property
    def primary(self) -> Optional[ModelSummary]:
        return self.models[0] if self.models else None

    def to_dict(self, include_timing: bool = True) -> Dict[str, Any]:
        primary = self.primary.to_dict() if self.primary else {}
        data: Dict[str, Any] = {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "stats": self.stats.to_dict() if self.stats else None,
            "rmse": primary.get("rmse"),
            "mae": primary.get("mae"),
            "iterations_run": primary.get("iterations_run", 0),
            "elapsed_seconds": primary.get("elapsed_seconds", 0.0),
            "history": primary.get("history", []),
            "total_seconds": self.total_seconds,
        }
        if len(self.models) > 1:
            data["models"] = {m.kind: m.to_dict() for m in self.models}
        if self.grid:
            data["grid"] = self.grid
        if not include_timing:
            _zero_timing(data)
        return data


def _zero_timing(node: Any) -> None:
    if isinstance(node, dict):
        for key, value in node.items():
            if key in TIMING_KEYS and isinstance(value, (int, float)):
                node[key] = 0.0
            else:
                _zero_timing(value)
    elif isinstance(node, list):
        for item in node:
            _zero_timing(item)


def write_report(report: RunReport, path, include_timing: bool = True) -> None:
    path = Path(path)
    try:
        with open(path, "w") as f:
            json.dump(report.to_dict(include_timing), f, indent=2)
            f.write("\n")
        logger.info(f"Report written to {path}")
    except OSError as e:
        logger.error(f"Error writing report: {e}")
        raise


def write_history_csv(history: List[IterationRecord], path, include_timing: bool = True) -> None:
    """One row per iteration, for plotting error curves"""
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for record in history:
            row = record.to_dict()
            if not include_timing:
                row["elapsed_seconds"] = 0.0
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    logger.info(f"History ({len(history)} iterations) written to {path}")
