"""
ALS-based Q-procedure
Closed-form ridge solve of every time-consistent target factor q_j against the stacked temporal factors
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from dataseq import MatrixSequence
from ekf import TemporalFactors
from errors import DimensionMismatch, EKLFError, EmptyDesign, NonPositiveLambda
from linalg import solve_spd

logger = logging.getLogger(__name__)

# Q is an M x f matrix whose j-th row is q_j, shared by every slot
ConsistentFactors = np.ndarray


@dataclass(frozen=True)
class StackedDesign:
    """Row a of design is the factor row that produced targets[a]"""
    design: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.design.ndim != 2 or self.design.shape[0] != self.targets.shape[0]:
            raise DimensionMismatch(
                f"design {self.design.shape} and targets {self.targets.shape} are not index-aligned"
            )

    @property
    def count(self) -> int:
        return self.targets.shape[0]

    @property
    def rank(self) -> int:
        return self.design.shape[1]


def build_stacked_design(train: MatrixSequence, n: TemporalFactors, j: int) -> StackedDesign:
    """Stack n_(t),i for every observation (t, i, j) of column j in (t, i) order"""
    if n.num_slots != train.slots or n.num_nodes != train.nodes:
        raise DimensionMismatch(f"temporal factors {n.slots.shape} do not cover dims {train.dims}")
    observed = train.observations_of_column(j)
    if not observed:
        return StackedDesign(np.zeros((0, n.rank)), np.zeros(0))
    ts = np.fromiter((t - 1 for t, _, _ in observed), dtype=np.int64, count=len(observed))
    iis = np.fromiter((i - 1 for _, i, _ in observed), dtype=np.int64, count=len(observed))
    targets = np.fromiter((w for _, _, w in observed), dtype=float, count=len(observed))
    return StackedDesign(n.slots[ts, iis], targets)


def _check_lambda(lam: float) -> None:
    if not lam > 0:
        raise NonPositiveLambda(f"regularization coefficient must be > 0, got {lam}")


def solve_qj(d: StackedDesign, lam: float) -> np.ndarray:
    """(N^T N + |Y(j)|/lam I) q_j = N^T y"""
    _check_lambda(lam)
    if d.count == 0:
        raise EmptyDesign("column has no observations; closed form is undefined")
    gram = d.design.T @ d.design + (d.count / lam) * np.eye(d.rank)
    return solve_spd(gram, d.design.T @ d.targets)


def partial_loss_gradient(d: StackedDesign, q_j, lam: float) -> np.ndarray:
    """-2 lam N^T y + 2 lam N^T N q_j + 2 |Y(j)| q_j"""
    q_j = np.asarray(q_j, dtype=float)
    if q_j.shape != (d.rank,):
        raise DimensionMismatch(f"q_j shape {q_j.shape} does not match design rank {d.rank}")
    part1 = -2.0 * lam * (d.design.T @ d.targets)
    part2 = 2.0 * lam * (d.design.T @ (d.design @ q_j))
    part3 = 2.0 * d.count * q_j
    return part1 + part2 + part3


def partial_loss(d: StackedDesign, q_j, lam: float) -> float:
    """Column-j share of the training objective"""
    q_j = np.asarray(q_j, dtype=float)
    residual = d.targets - d.design @ q_j
    return float(lam * residual @ residual + d.count * (q_j @ q_j))


def solve_ridge_rows(
    designs: Callable[[int], StackedDesign],
    rows: Sequence[int],
    lam: float,
    previous: np.ndarray,
    workers: int = 1,
) -> np.ndarray:
    """
    Replace row r-1 of previous by solve_qj(designs(r)) for every r in rows with
    at least one observation; rows without observations keep their previous value.
    """
    _check_lambda(lam)
    result = np.array(previous, dtype=float, copy=True)

    def solve(r: int) -> Tuple[int, Optional[np.ndarray]]:
        d = designs(r)
        if d.count == 0:
            return r, None
        try:
            return r, solve_qj(d, lam)
        except EKLFError as e:
            raise e.add_context(column=r)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            solved: List = list(pool.map(solve, rows))
    else:
        solved = [solve(r) for r in rows]

    kept = 0
    for r, value in solved:
        if value is None:
            kept += 1
        else:
            result[r - 1] = value
    if kept:
        logger.debug(f"{kept} rows without observations kept their previous value")
    return result


def run_q_procedure(
    train: MatrixSequence,
    n: TemporalFactors,
    lam: float,
    q_prev: ConsistentFactors,
    workers: int = 1,
) -> ConsistentFactors:
    q_prev = np.asarray(q_prev, dtype=float)
    if q_prev.shape != (train.nodes, n.rank):
        raise DimensionMismatch(f"previous Q {q_prev.shape} does not match ({train.nodes}, {n.rank})")
    return solve_ridge_rows(
        lambda j: build_stacked_design(train, n, j),
        range(1, train.nodes + 1),
        lam,
        q_prev,
        workers,
    )
