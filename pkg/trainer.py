"""
EKLF training loop
Alternates the EKF-based N-procedure and the ALS-based Q-procedure, tracks validation error,
and provides prediction, RMSE/MAE evaluation, a lambda grid search and a static pooled-ALS baseline
"""

import logging
import math
import time
from dataclasses import dataclass, asdict, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from als import StackedDesign, run_q_procedure, solve_ridge_rows
from dataseq import MatrixSequence
from ekf import Activation, Monitor, NoiseConfig, TemporalFactors, run_n_procedure
from errors import (
    ConfigError,
    DimensionMismatch,
    EKLFError,
    EmptyTestSet,
    EmptyTrainSet,
    IndexOutOfRange,
)

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = (0.001, 0.01, 0.1)
EKLF = "eklf"
STATIC = "static"


@dataclass(frozen=True)
class HyperParams:
    """Model and termination settings; defaults follow the published protocol"""
    rank: int = 20
    lam: float = 0.01
    alpha: float = 0.01
    activation: str = "leaky_relu"
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    max_iters: int = 500
    err_threshold: float = 1e-5
    seed: int = 20240101
    workers: int = 1

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")
        if not self.lam > 0:
            raise ConfigError(f"lambda must be > 0, got {self.lam}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.err_threshold > 0:
            raise ConfigError(f"err_threshold must be > 0, got {self.err_threshold}")
        if self.seed < 0:
            raise ConfigError("seed must be unsigned")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        # fail early on a bad activation name
        self.activation_fn()

    def activation_fn(self) -> Activation:
        return Activation.parse(self.activation, self.alpha)

    def with_lambda(self, lam: float) -> "HyperParams":
        return replace(self, lam=lam)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    train_rmse: float
    val_rmse: float
    val_mae: float
    objective_before_q: float
    objective_after_q: float
    elapsed_seconds: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainedModel:
    kind: str
    n: TemporalFactors
    q: np.ndarray
    nodes: int
    slots: int
    hyper: HyperParams
    history: List[IterationRecord] = field(default_factory=list)
    best_iteration: int = 0
    iterations_run: int = 0
    elapsed_seconds: float = 0.0

    @property
    def dims(self) -> Tuple[int, int]:
        return (self.nodes, self.slots)

    def _scored(self, metric: Callable[[IterationRecord], float]) -> List[IterationRecord]:
        return [r for r in self.history if not math.isnan(metric(r))]

    @property
    def best_val_rmse(self) -> float:
        scored = self._scored(lambda r: r.val_rmse)
        return min(r.val_rmse for r in scored) if scored else math.nan

    def _time_to_best(self, metric: Callable[[IterationRecord], float]) -> float:
        scored = self._scored(metric)
        if not scored:
            return 0.0
        best = min(scored, key=metric)
        return best.elapsed_seconds

    @property
    def time_to_best_rmse(self) -> float:
        return self._time_to_best(lambda r: r.val_rmse)

    @property
    def time_to_best_mae(self) -> float:
        return self._time_to_best(lambda r: r.val_mae)


@dataclass(frozen=True)
class EvalReport:
    rmse: float
    mae: float
    count: int
    elapsed_seconds: float
    iterations_run: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _slots_of(n) -> np.ndarray:
    return n.slots if isinstance(n, TemporalFactors) else np.asarray(n, dtype=float)


def _residuals(seq: MatrixSequence, n, q: np.ndarray) -> np.ndarray:
    t, i, j, w = seq.arrays()
    slots = _slots_of(n)
    if slots.shape[:2] != (seq.slots, seq.nodes) or q.shape != (seq.nodes, slots.shape[2]):
        raise DimensionMismatch(
            f"factors N {slots.shape}, Q {q.shape} do not match dims (M={seq.nodes}, T={seq.slots})"
        )
    return w - np.einsum("kf,kf->k", slots[t, i], q[j])


def error_metrics(seq: MatrixSequence, n, q: np.ndarray) -> Tuple[float, float]:
    """(RMSE, MAE) over the observed entries of seq"""
    if len(seq) == 0:
        return math.nan, math.nan
    r = _residuals(seq, n, q)
    return float(np.sqrt(np.mean(r * r))), float(np.mean(np.abs(r)))


def objective(seq: MatrixSequence, n, q, lam: float) -> float:
    """Per-entry sum of lam*(y - <n, q>)^2 + |n|^2 + |q|^2"""
    if len(seq) == 0:
        return 0.0
    q = np.asarray(q, dtype=float)
    r = _residuals(seq, n, q)
    t, i, j, _ = seq.arrays()
    rows = _slots_of(n)[t, i]
    cols = q[j]
    return float(lam * (r @ r) + np.sum(rows * rows) + np.sum(cols * cols))


def initialize(nodes: int, rank: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Q and the initial node states, both uniform on (0, 0.1]"""
    rng = np.random.default_rng(seed)
    q = 0.1 - rng.uniform(0.0, 0.1, size=(nodes, rank))
    init_means = 0.1 - rng.uniform(0.0, 0.1, size=(nodes, rank))
    return q, init_means


def _check_splits(train: MatrixSequence, val: MatrixSequence) -> MatrixSequence:
    if len(train) == 0:
        raise EmptyTrainSet("training set is empty")
    if val.dims != train.dims:
        raise DimensionMismatch(f"validation dims {val.dims} differ from training dims {train.dims}")
    if len(val) == 0:
        logger.warning("Validation set is empty; monitoring training RMSE instead")
        return train
    return val


Step = Callable[[int], Tuple[np.ndarray, np.ndarray, float, float]]


def _improves(rmse: float, best_rmse: Optional[float]) -> bool:
    # any finite RMSE replaces a NaN best
    if best_rmse is None:
        return True
    if math.isnan(best_rmse):
        return not math.isnan(rmse)
    return rmse < best_rmse


def _alternate(
    kind: str,
    train: MatrixSequence,
    val: MatrixSequence,
    hyper: HyperParams,
    step: Step,
) -> TrainedModel:
    """
    Shared iteration driver: run step(iteration) until the monitored RMSE changes
    by less than err_threshold or max_iters is reached, keeping the best snapshot.
    """
    monitored = _check_splits(train, val)
    history: List[IterationRecord] = []
    best: Optional[Tuple[float, int, np.ndarray, np.ndarray]] = None
    previous = None
    start = time.perf_counter()

    for iteration in range(1, hyper.max_iters + 1):
        try:
            slots, q, before, after = step(iteration)
            train_rmse, _ = error_metrics(train, slots, q)
            val_rmse, val_mae = error_metrics(monitored, slots, q)
        except EKLFError as e:
            raise e.add_context(iteration=iteration)

        record = IterationRecord(
            iteration=iteration,
            train_rmse=train_rmse,
            val_rmse=val_rmse,
            val_mae=val_mae,
            objective_before_q=before,
            objective_after_q=after,
            elapsed_seconds=time.perf_counter() - start,
        )
        history.append(record)
        logger.info(
            f"[{kind}] iteration {iteration}: train RMSE {train_rmse:.6f}, "
            f"val RMSE {val_rmse:.6f}, val MAE {val_mae:.6f}"
        )

        if _improves(val_rmse, best[0] if best else None):
            best = (val_rmse, iteration, slots, q)
        if previous is not None and abs(val_rmse - previous) < hyper.err_threshold:
            logger.info(f"[{kind}] converged after {iteration} iterations (|dRMSE| < {hyper.err_threshold})")
            break
        previous = val_rmse
    else:
        logger.info(f"[{kind}] stopped at the iteration cap {hyper.max_iters}")

    _, best_iteration, slots, q = best
    model_n = slots if isinstance(slots, TemporalFactors) else TemporalFactors(np.array(slots))
    return TrainedModel(
        kind=kind,
        n=model_n,
        q=q,
        nodes=train.nodes,
        slots=train.slots,
        hyper=hyper,
        history=history,
        best_iteration=best_iteration,
        iterations_run=len(history),
        elapsed_seconds=time.perf_counter() - start,
    )


def train(
    train_seq: MatrixSequence,
    val_seq: MatrixSequence,
    hyper: HyperParams,
    monitor: Optional[Monitor] = None,
) -> TrainedModel:
    """Alternate N-procedure and Q-procedure; return the best-validation snapshot"""
    act = hyper.activation_fn()
    q, init_means = initialize(train_seq.nodes, hyper.rank, hyper.seed)
    state = {"q": q}

    def step(iteration: int):
        q_now = state["q"]
        n = run_n_procedure(train_seq, q_now, act, hyper.noise, init_means, hyper.workers, monitor)
        before = objective(train_seq, n, q_now, hyper.lam)
        q_next = run_q_procedure(train_seq, n, hyper.lam, q_now, hyper.workers)
        after = objective(train_seq, n, q_next, hyper.lam)
        state["q"] = q_next
        return n, q_next, before, after

    logger.info(
        f"Training EKLF on {len(train_seq)} observations "
        f"(M={train_seq.nodes}, T={train_seq.slots}, rank={hyper.rank}, lambda={hyper.lam})"
    )
    return _alternate(EKLF, train_seq, val_seq, hyper, step)


def _pooled_index(seq: MatrixSequence, by: str) -> Dict[int, Tuple[np.ndarray, np.ndarray]]:
    """1-based row (by='i') or column (by='j') -> (zero-based partner indices, weights), all slots pooled"""
    _, i, j, w = seq.arrays()
    key, partner = (i, j) if by == "i" else (j, i)
    index: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
    for k in np.unique(key):
        selected = key == k
        index[int(k) + 1] = (partner[selected], w[selected])
    return index


def train_static_baseline(train_seq: MatrixSequence, val_seq: MatrixSequence, hyper: HyperParams) -> TrainedModel:
    """
    Pool every slot into one matrix-completion problem and alternate closed-form
    ridge solves for the source-side factors P and the target-side factors Q.
    """
    q, p = initialize(train_seq.nodes, hyper.rank, hyper.seed)
    by_row = _pooled_index(train_seq, "i")
    by_col = _pooled_index(train_seq, "j")
    empty = (np.zeros(0, dtype=np.int64), np.zeros(0))
    nodes = range(1, train_seq.nodes + 1)
    state = {"p": p, "q": q}

    def designs(index, other):
        def build(r: int) -> StackedDesign:
            partners, weights = index.get(r, empty)
            return StackedDesign(other[partners], weights)
        return build

    def as_slots(p_now: np.ndarray) -> np.ndarray:
        return np.broadcast_to(p_now, (train_seq.slots,) + p_now.shape)

    def step(iteration: int):
        p_next = solve_ridge_rows(designs(by_row, state["q"]), nodes, hyper.lam, state["p"], hyper.workers)
        before = objective(train_seq, as_slots(p_next), state["q"], hyper.lam)
        q_next = solve_ridge_rows(designs(by_col, p_next), nodes, hyper.lam, state["q"], hyper.workers)
        after = objective(train_seq, as_slots(p_next), q_next, hyper.lam)
        state["p"], state["q"] = p_next, q_next
        return TemporalFactors(as_slots(p_next).copy()), q_next, before, after

    logger.info(f"Training static pooled-ALS baseline on {len(train_seq)} observations")
    return _alternate(STATIC, train_seq, val_seq, hyper, step)


def grid_search(
    train_seq: MatrixSequence,
    val_seq: MatrixSequence,
    hyper: HyperParams,
    lambdas: Sequence[float] = DEFAULT_LAMBDA_GRID,
    trainer: Optional[Callable[[MatrixSequence, MatrixSequence, HyperParams], TrainedModel]] = None,
) -> Tuple[TrainedModel, List[Dict[str, float]]]:
    """Train once per lambda and keep the model with the lowest best-validation RMSE"""
    trainer = trainer or train
    best_model = None
    results = []
    for lam in lambdas:
        model = trainer(train_seq, val_seq, hyper.with_lambda(lam))
        results.append({"lambda": lam, "best_val_rmse": model.best_val_rmse})
        logger.info(f"Grid search lambda={lam}: best val RMSE {model.best_val_rmse:.6f}")
        if best_model is None or _improves(model.best_val_rmse, best_model.best_val_rmse):
            best_model = model
    if best_model is None:
        raise ConfigError("lambda grid is empty")
    return best_model, results


def _check_entry(model: TrainedModel, t: int, i: int, j: int) -> None:
    if not 1 <= t <= model.slots:
        raise IndexOutOfRange(f"slot index t={t} outside 1..{model.slots}")
    for name, value in (("i", i), ("j", j)):
        if not 1 <= value <= model.nodes:
            raise IndexOutOfRange(f"node index {name}={value} outside 1..{model.nodes}")


def predict_entry(model: TrainedModel, t: int, i: int, j: int) -> float:
    """Entry (i, j) of N_(t) Q^T"""
    _check_entry(model, t, i, j)
    return float(model.n.row(t, i) @ model.q[j - 1])


def predict_slot(model: TrainedModel, t: int) -> np.ndarray:
    _check_entry(model, t, 1, 1)
    return model.n.slot(t) @ model.q.T


def evaluate(model: TrainedModel, test: MatrixSequence) -> EvalReport:
    if len(test) == 0:
        raise EmptyTestSet("test set is empty")
    if test.dims != model.dims:
        raise DimensionMismatch(f"test dims {test.dims} differ from model dims {model.dims}")
    rmse, mae = error_metrics(test, model.n, model.q)
    logger.info(f"Evaluated {model.kind} model on {len(test)} entries: RMSE {rmse:.6f}, MAE {mae:.6f}")
    return EvalReport(
        rmse=rmse,
        mae=mae,
        count=len(test),
        elapsed_seconds=model.elapsed_seconds,
        iterations_run=model.iterations_run,
    )
