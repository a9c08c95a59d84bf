"""
Incomplete matrix sequences for dynamic weighted directed graphs
Data model, text ingestion and serialization, splitting, statistics and synthetic generation
"""

import logging
import math
import re
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from errors import (
    ConfigError,
    DuplicateKey,
    EmptySequence,
    IndexOutOfRange,
    MalformedLine,
    NonFiniteWeight,
)

logger = logging.getLogger(__name__)

FIELD_SEPARATOR = re.compile(r"[\t, ]+")

# Train-validation-test presets used for every dataset
TESTING_CASES: Dict[int, Tuple[float, float, float]] = {
    1: (0.1, 0.1, 0.8),
    2: (0.2, 0.1, 0.7),
    3: (0.3, 0.1, 0.6),
}

# Published dataset sizes (nodes, slots, known entries); the data itself is not public
PUBLISHED_DATASETS: Dict[str, Tuple[int, int, int]] = {
    "D1": (499, 1148, 29632),
    "D2": (1894, 149, 29528),
    "D3": (1999, 149, 30802),
}


@dataclass(frozen=True, order=True)
class Observation:
    """One observed edge weight y_(t),i,j; indices are 1-based"""
    t: int
    i: int
    j: int
    w: float

    @property
    def key(self) -> Tuple[int, int, int]:
        return (self.t, self.i, self.j)


@dataclass(frozen=True)
class DatasetStats:
    nodes: int
    slots: int
    known: int
    density: float

    @property
    def density_percent(self) -> str:
        return f"{100.0 * self.density:.4f}%"

    def to_dict(self) -> Dict[str, object]:
        data = asdict(self)
        data["density_percent"] = self.density_percent
        return data


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.3
    val_frac: float = 0.1
    test_frac: float = 0.6
    seed: int = 20240101

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(f < 0 or f > 1 for f in fracs):
            raise ConfigError(f"split fractions must lie in [0, 1], got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-12:
            raise ConfigError(f"split fractions must sum to 1, got {sum(fracs)!r}")
        if self.seed < 0:
            raise ConfigError("split seed must be unsigned")

    @classmethod
    def from_case(cls, case: int, seed: int = 20240101) -> "SplitSpec":
        if case not in TESTING_CASES:
            raise ConfigError(f"unknown testing case {case}; choose one of {sorted(TESTING_CASES)}")
        train, val, test = TESTING_CASES[case]
        return cls(train, val, test, seed)


@dataclass(frozen=True)
class SyntheticConfig:
    nodes: int = 50
    slots: int = 30
    rank: int = 4
    density: float = 0.02
    drift_scale: float = 0.05
    noise_sigma: float = 0.05
    alpha: float = 0.01
    seed: int = 20240101

    def __post_init__(self):
        if self.nodes < 1 or self.slots < 1:
            raise ConfigError("synthetic sequence needs at least one node and one slot")
        if self.rank < 1:
            raise ConfigError("rank must be >= 1")
        if not 0 < self.density <= 1:
            raise ConfigError(f"density must lie in (0, 1], got {self.density}")
        if self.noise_sigma < 0 or self.drift_scale < 0:
            raise ConfigError("noise_sigma and drift_scale must be >= 0")
        if not self.alpha > 0:
            raise ConfigError("activation slope must be > 0")
        if self.seed < 0:
            raise ConfigError("seed must be unsigned")


@dataclass(frozen=True)
class FactorSet:
    """Temporal factors n (T x M x f) and time-consistent factors q (M x f)"""
    n: np.ndarray
    q: np.ndarray

    def inner(self, t: int, i: int, j: int) -> float:
        return float(self.n[t - 1, i - 1] @ self.q[j - 1])


class MatrixSequence:
    """
    Sparse observed entries of an incomplete matrix sequence Y.

    Immutable after construction. Entries are kept in (t, i, j) order and
    indexed by (t, i) row and by target column j.
    """

    def __init__(self, nodes: int, slots: int, entries: Iterable[Observation] = ()):
        if nodes < 1 or slots < 1:
            raise IndexOutOfRange(f"dims must be positive, got M={nodes}, T={slots}")
        self.nodes = nodes
        self.slots = slots

        seen = set()
        checked = []
        for obs in entries:
            self._check_indices(obs.t, obs.i, obs.j)
            if not math.isfinite(obs.w):
                raise NonFiniteWeight(f"weight {obs.w!r} is not finite", key=obs.key)
            if obs.key in seen:
                raise DuplicateKey(obs.key)
            seen.add(obs.key)
            checked.append(obs)
        self._entries: Tuple[Observation, ...] = tuple(sorted(checked))

        self._rows: Dict[Tuple[int, int], List[Tuple[int, float]]] = {}
        self._cols: Dict[int, List[Tuple[int, int, float]]] = {}
        for obs in self._entries:
            self._rows.setdefault((obs.t, obs.i), []).append((obs.j, obs.w))
            self._cols.setdefault(obs.j, []).append((obs.t, obs.i, obs.w))
        self._arrays = None

    @property
    def dims(self) -> Tuple[int, int]:
        return (self.nodes, self.slots)

    @property
    def entries(self) -> Tuple[Observation, ...]:
        return self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[Observation]:
        return iter(self._entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MatrixSequence):
            return NotImplemented
        return self.dims == other.dims and self._entries == other._entries

    def __repr__(self) -> str:
        return f"MatrixSequence(M={self.nodes}, T={self.slots}, known={len(self)})"

    def _check_indices(self, t: int, i: Optional[int] = None, j: Optional[int] = None) -> None:
        if not 1 <= t <= self.slots:
            raise IndexOutOfRange(f"slot index t={t} outside 1..{self.slots}")
        for name, value in (("i", i), ("j", j)):
            if value is not None and not 1 <= value <= self.nodes:
                raise IndexOutOfRange(f"node index {name}={value} outside 1..{self.nodes}")

    def observations_of_node_at(self, t: int, i: int) -> List[Tuple[int, float]]:
        """y_(t),i as (j, w) pairs sorted by j"""
        self._check_indices(t, i)
        return list(self._rows.get((t, i), ()))

    def observations_of_column(self, j: int) -> List[Tuple[int, int, float]]:
        """Y_Lambda(j) across all slots as (t, i, w) sorted by (t, i)"""
        if not 1 <= j <= self.nodes:
            raise IndexOutOfRange(f"node index j={j} outside 1..{self.nodes}")
        return list(self._cols.get(j, ()))

    def observed_columns(self) -> List[int]:
        return sorted(self._cols)

    def subset(self, entries: Iterable[Observation]) -> "MatrixSequence":
        return MatrixSequence(self.nodes, self.slots, entries)

    def arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Zero-based (t, i, j) index arrays and the weight array, in entry order"""
        if self._arrays is None:
            if self._entries:
                t, i, j, w = zip(*((o.t, o.i, o.j, o.w) for o in self._entries))
            else:
                t = i = j = w = ()
            self._arrays = (
                np.asarray(t, dtype=np.int64) - 1,
                np.asarray(i, dtype=np.int64) - 1,
                np.asarray(j, dtype=np.int64) - 1,
                np.asarray(w, dtype=float),
            )
        return self._arrays

    def stats(self) -> DatasetStats:
        return stats(self)


# Free-function operations

def observations_of_node_at(seq: MatrixSequence, t: int, i: int) -> List[Tuple[int, float]]:
    return seq.observations_of_node_at(t, i)


def observations_of_column(seq: MatrixSequence, j: int) -> List[Tuple[int, int, float]]:
    return seq.observations_of_column(j)


def stats(seq: MatrixSequence) -> DatasetStats:
    known = len(seq)
    capacity = seq.nodes * seq.nodes * seq.slots
    return DatasetStats(nodes=seq.nodes, slots=seq.slots, known=known, density=known / capacity)


def _parse_int(field: str, line_no: int, text: str) -> int:
    try:
        return int(field)
    except ValueError:
        raise MalformedLine(line_no, text, f"index {field!r} is not an integer") from None


def parse_sequence(lines: Iterable[str], dims: Optional[Tuple[int, int]] = None) -> MatrixSequence:
    """
    Parse "t i j w" lines (tab, comma or space separated, '#' comments).

    A "dims M T" header declares the dimensions; explicit dims take precedence.
    """
    header_dims = None
    raw = []
    for line_no, text in enumerate(lines, start=1):
        stripped = text.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = FIELD_SEPARATOR.split(stripped)
        if fields[0].lower() == "dims":
            if len(fields) != 3:
                raise MalformedLine(line_no, text, "header must read 'dims M T'")
            header_dims = (_parse_int(fields[1], line_no, text), _parse_int(fields[2], line_no, text))
            continue
        if len(fields) != 4:
            raise MalformedLine(line_no, text)
        t, i, j = (_parse_int(f, line_no, text) for f in fields[:3])
        try:
            w = float(fields[3])
        except ValueError:
            raise MalformedLine(line_no, text, f"weight {fields[3]!r} is not a number") from None
        if not math.isfinite(w):
            raise NonFiniteWeight(f"weight {fields[3]!r} is not finite", line=line_no)
        raw.append((line_no, Observation(t, i, j, w)))

    if dims is None:
        if header_dims is None:
            raise MalformedLine(0, "", "no 'dims M T' header and no explicit dims")
        dims = header_dims
    elif header_dims is not None and tuple(header_dims) != tuple(dims):
        logger.warning(f"Header dims {header_dims} overridden by explicit dims {tuple(dims)}")

    nodes, slots = dims
    seq = MatrixSequence(nodes, slots)
    seen = set()
    for line_no, obs in raw:
        try:
            seq._check_indices(obs.t, obs.i, obs.j)
        except IndexOutOfRange as e:
            raise e.add_context(line=line_no)
        if obs.key in seen:
            raise DuplicateKey(obs.key).add_context(line=line_no)
        seen.add(obs.key)
    return MatrixSequence(nodes, slots, (obs for _, obs in raw))


def serialize_sequence(seq: MatrixSequence) -> Iterator[str]:
    yield f"dims {seq.nodes} {seq.slots}\n"
    for obs in seq:
        yield f"{obs.t}\t{obs.i}\t{obs.j}\t{obs.w!r}\n"


def read_sequence(path, dims: Optional[Tuple[int, int]] = None) -> MatrixSequence:
    path = Path(path)
    with open(path, "r") as f:
        try:
            seq = parse_sequence(f, dims)
        except MalformedLine as e:
            raise e.add_context(file=str(path))
    logger.info(f"Loaded {len(seq)} observations from {path} (M={seq.nodes}, T={seq.slots})")
    return seq


def write_sequence(seq: MatrixSequence, path) -> None:
    path = Path(path)
    with open(path, "w") as f:
        f.writelines(serialize_sequence(seq))
    logger.info(f"Wrote {len(seq)} observations to {path}")


def split(seq: MatrixSequence, spec: SplitSpec) -> Tuple[MatrixSequence, MatrixSequence, MatrixSequence]:
    """Partition entries: floor(frac*K) to train and validation, remainder to test"""
    k = len(seq)
    if k == 0:
        raise EmptySequence("cannot split an empty sequence")

    # the epsilon keeps 0.29*100 from flooring to 28
    n_train = math.floor(spec.train_frac * k + 1e-9)
    n_val = math.floor(spec.val_frac * k + 1e-9)
    n_val = min(n_val, k - n_train)

    order = np.random.default_rng(spec.seed).permutation(k)
    entries = seq.entries
    train = seq.subset(entries[p] for p in order[:n_train])
    val = seq.subset(entries[p] for p in order[n_train:n_train + n_val])
    test = seq.subset(entries[p] for p in order[n_train + n_val:])
    logger.info(f"Split {k} observations into train={len(train)}, val={len(val)}, test={len(test)}")
    return train, val, test


def leaky_relu(x: np.ndarray, alpha: float) -> np.ndarray:
    return np.where(x > 0, x, alpha * x)


def _uniform_open_low(rng: np.random.Generator, shape) -> np.ndarray:
    # uniform on (0, 0.1]
    return 0.1 - rng.uniform(0.0, 0.1, size=shape)


def generate_synthetic(cfg: SyntheticConfig) -> Tuple[MatrixSequence, FactorSet]:
    """
    Draw a LeakyReLU-warped latent random walk and sample observed entries from it.

    N_(1) ~ U(0, 0.1], N_(t) = f(N_(t-1) + drift), Q ~ U(0, 0.1];
    each (t, i, j) is kept with probability cfg.density and observed with Gaussian noise.
    """
    rng = np.random.default_rng(cfg.seed)
    m, T, f = cfg.nodes, cfg.slots, cfg.rank

    n = np.empty((T, m, f))
    n[0] = _uniform_open_low(rng, (m, f))
    for t in range(1, T):
        drift = rng.normal(0.0, cfg.drift_scale, size=(m, f))
        n[t] = leaky_relu(n[t - 1] + drift, cfg.alpha)
    q = _uniform_open_low(rng, (m, f))

    cells = T * m * m
    picked = np.sort(rng.choice(cells, size=rng.binomial(cells, cfg.density), replace=False))
    ts, rest = np.divmod(picked, m * m)
    iis, js = np.divmod(rest, m)
    clean = np.einsum("kf,kf->k", n[ts, iis], q[js])
    noise = rng.normal(0.0, cfg.noise_sigma, size=len(clean))
    weights = clean + noise

    entries = (
        Observation(int(t) + 1, int(i) + 1, int(j) + 1, float(w))
        for t, i, j, w in zip(ts, iis, js, weights)
    )
    seq = MatrixSequence(m, T, entries)
    logger.info(f"Generated synthetic sequence M={m}, T={T}, rank={f} with {len(seq)} observations")
    return seq, FactorSet(n=n, q=q)
