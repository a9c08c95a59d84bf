"""
EKF-based N-procedure
Tracks each node's temporal latent factors with a nonlinear predict / feedback-update recursion
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from dataseq import MatrixSequence
from errors import ConfigError, DimensionMismatch, EKLFError, NonFiniteState
from linalg import is_psd, solve_spd, symmetrize

logger = logging.getLogger(__name__)

PRIOR = "prior"
POSTERIOR = "posterior"

# monitor(t, i, estimate) sees every prior and posterior estimate
Monitor = Callable[[int, int, "StateEstimate"], None]


@dataclass(frozen=True)
class Activation:
    """Elementwise LeakyReLU; identity is the alpha == 1 case"""
    kind: str = "leaky_relu"
    alpha: float = 0.01

    def __post_init__(self):
        if self.kind not in ("leaky_relu", "identity"):
            raise ConfigError(f"unknown activation {self.kind!r}")
        if not self.alpha > 0:
            raise ConfigError(f"activation slope must be > 0, got {self.alpha}")
        if self.kind == "identity" and self.alpha != 1.0:
            object.__setattr__(self, "alpha", 1.0)

    @classmethod
    def parse(cls, kind: str, alpha: float = 0.01) -> "Activation":
        kind = kind.strip().lower().replace("-", "_")
        return cls(kind, 1.0 if kind == "identity" else alpha)

    def evaluate(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(f(x), f'(x)) with f'(0) = alpha"""
        x = np.asarray(x, dtype=float)
        positive = x > 0
        return np.where(positive, x, self.alpha * x), np.where(positive, 1.0, self.alpha)


def activation_eval(act: Activation, x) -> Tuple[np.ndarray, np.ndarray]:
    return act.evaluate(x)


@dataclass(frozen=True)
class NoiseConfig:
    """Isotropic state-transition (W) and observation (R) noise variances"""
    w_scale: float = 0.01
    r_scale: float = 0.1
    p0_scale: float = 1.0

    def __post_init__(self):
        values = (self.w_scale, self.r_scale, self.p0_scale)
        if not all(np.isfinite(v) for v in values):
            raise ConfigError("noise scales must be finite")
        if self.w_scale < 0 or self.r_scale < 0:
            raise ConfigError("noise variances must be >= 0")
        if not self.p0_scale > 0:
            raise ConfigError("initial covariance scale must be > 0")


@dataclass(frozen=True)
class StateEstimate:
    mean: np.ndarray
    cov: np.ndarray
    flavor: str = POSTERIOR

    @property
    def rank(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class TransitionLinearization:
    """S(n) ~= B n + C around the posterior mean"""
    B: np.ndarray
    C: np.ndarray


@dataclass(frozen=True)
class ObservationLinearization:
    """O(n) ~= D n + H around the prior mean; predicted holds O(prior mean)"""
    D: np.ndarray
    H: np.ndarray
    q_rows: np.ndarray
    predicted: np.ndarray

    @property
    def count(self) -> int:
        return self.q_rows.shape[0]


@dataclass(frozen=True)
class TemporalFactors:
    """
    slots[t-1] is N_(t) (M x f); final_cov[i] is the last posterior covariance of node i
    """
    slots: np.ndarray
    final_cov: Optional[np.ndarray] = None

    @property
    def num_slots(self) -> int:
        return self.slots.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.slots.shape[1]

    @property
    def rank(self) -> int:
        return self.slots.shape[2]

    def slot(self, t: int) -> np.ndarray:
        return self.slots[t - 1]

    def row(self, t: int, i: int) -> np.ndarray:
        return self.slots[t - 1, i - 1]


def check_covariance_health(cov: np.ndarray, shift: float = 1e-9) -> bool:
    """Symmetric within 1e-10 and Cholesky of cov + shift*I succeeds"""
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-10):
        return False
    return is_psd(cov, shift)


def predict(post: StateEstimate, act: Activation, noise: NoiseConfig) -> Tuple[StateEstimate, TransitionLinearization]:
    """State prediction: n- = f(n+), P- = B P+ B^T + W"""
    if not (np.all(np.isfinite(post.mean)) and np.all(np.isfinite(post.cov))):
        raise NonFiniteState("posterior state has non-finite entries")

    value, slope = act.evaluate(post.mean)
    B = np.diag(slope)
    C = value - slope * post.mean

    # B is diagonal so B P B^T scales rows and columns
    cov = slope[:, None] * post.cov * slope[None, :]
    cov = symmetrize(cov + noise.w_scale * np.eye(post.rank))
    return StateEstimate(value, cov, PRIOR), TransitionLinearization(B, C)


def linearize_observation(prior: StateEstimate, q_rows, act: Activation) -> ObservationLinearization:
    """D = q_rows * f'(n-) columnwise, H = O(n-) - D n-"""
    q_rows = np.asarray(q_rows, dtype=float)
    if q_rows.ndim != 2 or q_rows.shape[1] != prior.rank:
        raise DimensionMismatch(f"q_rows shape {q_rows.shape} does not match rank {prior.rank}")

    value, slope = act.evaluate(prior.mean)
    predicted = q_rows @ value
    D = q_rows * slope[None, :]
    H = predicted - D @ prior.mean
    return ObservationLinearization(D=D, H=H, q_rows=q_rows, predicted=predicted)


def update(prior: StateEstimate, y, obs_lin: ObservationLinearization, noise: NoiseConfig) -> StateEstimate:
    """Feedback update with one joint SPD solve of the m x m innovation covariance"""
    y = np.asarray(y, dtype=float)
    m = obs_lin.count
    if y.shape != (m,):
        raise DimensionMismatch(f"observation vector shape {y.shape} does not match {m} observed edges")
    if m == 0:
        return StateEstimate(prior.mean, prior.cov, POSTERIOR)

    D = obs_lin.D
    PDt = prior.cov @ D.T
    innovation_cov = symmetrize(D @ PDt + noise.r_scale * np.eye(m))
    # K = P D^T S^-1, solved as S K^T = D P
    gain = solve_spd(innovation_cov, PDt.T).T

    mean = prior.mean + gain @ (y - obs_lin.predicted)
    cov = symmetrize(prior.cov - gain @ D @ prior.cov)
    return StateEstimate(mean, cov, POSTERIOR)


def _track_node(
    i: int,
    train: MatrixSequence,
    q: np.ndarray,
    act: Activation,
    noise: NoiseConfig,
    init_mean: np.ndarray,
    monitor: Optional[Monitor],
) -> Tuple[np.ndarray, np.ndarray]:
    """Run the recursion for node i (1-based) over all slots"""
    f = q.shape[1]
    trajectory = np.empty((train.slots, f))
    state = StateEstimate(np.array(init_mean, dtype=float), noise.p0_scale * np.eye(f), POSTERIOR)

    for t in range(1, train.slots + 1):
        try:
            prior, _ = predict(state, act, noise)
            if monitor is not None:
                monitor(t, i, prior)
            observed = train.observations_of_node_at(t, i)
            if observed:
                targets = np.fromiter((j - 1 for j, _ in observed), dtype=np.int64, count=len(observed))
                y = np.fromiter((w for _, w in observed), dtype=float, count=len(observed))
                obs_lin = linearize_observation(prior, q[targets], act)
                state = update(prior, y, obs_lin, noise)
            else:
                state = StateEstimate(prior.mean, prior.cov, POSTERIOR)
            if monitor is not None:
                monitor(t, i, state)
        except EKLFError as e:
            raise e.add_context(t=t, node=i)
        trajectory[t - 1] = state.mean
    return trajectory, state.cov


def run_n_procedure(
    train: MatrixSequence,
    q: np.ndarray,
    act: Activation,
    noise: NoiseConfig,
    init_means: np.ndarray,
    workers: int = 1,
    monitor: Optional[Monitor] = None,
) -> TemporalFactors:
    """
    Estimate N_(1)..N_(T) node by node.

    Nodes are independent given Q, so they may be tracked on a thread pool;
    results are placed by node index and do not depend on the worker count.
    """
    q = np.asarray(q, dtype=float)
    init_means = np.asarray(init_means, dtype=float)
    m = train.nodes
    if q.shape[0] != m or init_means.shape != (m, q.shape[1]):
        raise DimensionMismatch(f"Q {q.shape} / initial means {init_means.shape} do not match M={m}")
    if not np.all(np.isfinite(q)):
        raise NonFiniteState("Q has non-finite entries")

    def track(i: int):
        return _track_node(i, train, q, act, noise, init_means[i - 1], monitor)

    nodes = range(1, m + 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results: List = list(pool.map(track, nodes))
    else:
        results = [track(i) for i in nodes]

    slots = np.empty((train.slots, m, q.shape[1]))
    final_cov = np.empty((m, q.shape[1], q.shape[1]))
    for index, (trajectory, cov) in enumerate(results):
        slots[:, index, :] = trajectory
        final_cov[index] = cov
    logger.debug(f"N-procedure tracked {m} nodes over {train.slots} slots")
    return TemporalFactors(slots=slots, final_cov=final_cov)
