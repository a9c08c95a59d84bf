"""
Small dense linear-algebra kernels
Cholesky factorization and SPD solves behind the Kalman gain and the ALS column solve
"""

import logging
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, solve_triangular
from scipy.linalg import cholesky as scipy_cholesky

from errors import DimensionMismatch, NotPositiveDefinite, NotSymmetric

logger = logging.getLogger(__name__)

# Smallest accepted pivot before its square root is taken
PIVOT_TOLERANCE = 1e-14
SYMMETRY_TOLERANCE = 1e-10


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular L with L @ L.T == A"""
    lower: np.ndarray

    @property
    def size(self) -> int:
        return self.lower.shape[0]

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T


def _as_square(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    return a


def cholesky(a) -> CholeskyFactor:
    """
    Factor a symmetric positive definite matrix.

    LAPACK factorization through scipy; every squared pivot must reach PIVOT_TOLERANCE.
    """
    a = _as_square(a)
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite("matrix has non-finite entries")

    scale = max(np.linalg.norm(a), np.finfo(float).tiny)
    asymmetry = np.linalg.norm(a - a.T)
    if asymmetry > SYMMETRY_TOLERANCE * scale:
        raise NotSymmetric(f"matrix is not symmetric (relative asymmetry {asymmetry / scale:.3e})")

    try:
        lower = scipy_cholesky(a, lower=True)
    except LinAlgError as e:
        raise NotPositiveDefinite(f"matrix is not positive definite: {e}", pivot_index=_failed_minor(e))

    pivots = np.diag(lower) ** 2
    small = np.flatnonzero(~(pivots >= PIVOT_TOLERANCE))
    if small.size:
        j = int(small[0])
        raise NotPositiveDefinite(f"pivot {pivots[j]:.3e} below tolerance", pivot_index=j)
    return CholeskyFactor(lower)


def _failed_minor(error: LinAlgError) -> Optional[int]:
    # LAPACK reports the 1-based order of the leading minor that failed
    match = re.match(r"(\d+)-th leading minor", str(error))
    return int(match.group(1)) - 1 if match else None


def solve_spd(a, b) -> np.ndarray:
    """Solve A @ X = B for SPD A; B may be a vector or a matrix"""
    a = _as_square(a)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != a.shape[0]:
        raise DimensionMismatch(f"right-hand side has {b.shape[0]} rows, matrix has {a.shape[0]}")

    factor = cholesky(a)
    forward = solve_triangular(factor.lower, b, lower=True)
    return solve_triangular(factor.lower.T, forward, lower=False)


def symmetrize(a) -> np.ndarray:
    a = _as_square(a)
    return 0.5 * (a + a.T)


def is_psd(a, shift: float = 1e-9) -> bool:
    """Symmetric within tolerance and Cholesky of A + shift*I succeeds"""
    try:
        cholesky(_as_square(a) + shift * np.eye(len(a)))
    except (NotPositiveDefinite, NotSymmetric):
        return False
    return True
