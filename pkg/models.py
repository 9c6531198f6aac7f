"""
Domain types shared by the coupling, estimator, bound and oracle modules.

Traces and statistics are immutable once built; the only mutable piece is
the per-trace cache of evaluated test functions.
"""
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import stats

from errors import (
    EvaluationError,
    InvalidDistribution,
    InvalidMatrix,
    PlanInvalid,
    StateSpaceTooLarge,
)

# A chain state: int (discrete index), float vector, or spin lattice.
State = Any
InitialSampler = Callable[[np.random.Generator], State]
TestFunction = Callable[[State], Any]

ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-10
PMF_SUM_TOL = 1e-10
UNTYPED_TAIL_TOL = 1e-12
ORACLE_MAX_STATES = 64


@dataclass(frozen=True)
class LagConfig:
    lag: int
    max_sweeps: int
    initial: InitialSampler
    # simulate at least up to this X-time index, even after meeting
    horizon: int = 0

    def __post_init__(self):
        if self.lag < 1:
            raise PlanInvalid(f"lag must be >= 1, got {self.lag}")
        if self.max_sweeps <= self.lag:
            raise PlanInvalid(
                f"max_sweeps ({self.max_sweeps}) must exceed the lag ({self.lag})"
            )
        if self.horizon < 0:
            raise PlanInvalid("horizon must be nonnegative")


@dataclass(frozen=True, eq=False)
class CoupledTrace:
    """
    Realised paths of an L-lag coupled pair.

    x_path holds X_0 .. X_{n+L}, y_path holds Y_0 .. Y_n, and tau is the
    meeting time in X-chain time: the first t >= L with X_t == Y_{t-L}.
    """

    x_path: List[State]
    y_path: List[State]
    tau: Optional[int]
    lag: int
    seed: Tuple[int, ...] = ()
    # joint (coupled) steps performed before meeting
    joint_steps: int = 0
    _values: Dict[Any, Tuple[np.ndarray, np.ndarray]] = field(
        default_factory=dict, repr=False, compare=False
    )

    @property
    def met(self) -> bool:
        return self.tau is not None

    def values(self, h: TestFunction) -> Tuple[np.ndarray, np.ndarray]:
        """h evaluated along both paths, shape (len, dim); computed once per h."""
        cached = self._values.get(h)
        if cached is None:
            cached = (_evaluate(h, self.x_path), _evaluate(h, self.y_path))
            self._values[h] = cached
        return cached


def _evaluate(h: TestFunction, path: List[State]) -> np.ndarray:
    rows = [np.atleast_1d(np.asarray(h(state), dtype=float)) for state in path]
    if not rows:
        return np.empty((0, 0))
    values = np.vstack(rows)
    if not np.all(np.isfinite(values)):
        raise EvaluationError("test function returned a non-finite value on the trace")
    return values


@dataclass(frozen=True)
class MeetingStats:
    j: int
    j_tilde: int
    k: int
    lag: int

    def __post_init__(self):
        if self.j < 0 or self.j_tilde not in (self.j - 1, self.j):
            raise ValueError(f"inconsistent meeting stats j={self.j}, j_tilde={self.j_tilde}")


@dataclass(frozen=True, eq=False)
class EstimatorInput:
    trace: CoupledTrace
    k: int
    r: Optional[int] = None

    def __post_init__(self):
        if self.k < 0:
            raise PlanInvalid("burn-in k must be nonnegative")
        if self.r is not None and self.r < self.k:
            raise PlanInvalid(f"r ({self.r}) must be >= k ({self.k})")

    @property
    def end(self) -> int:
        return self.k if self.r is None else self.r


@dataclass(frozen=True, eq=False)
class JDistribution:
    """
    Law of the meeting count J.

    ``pmf[j] = P(J = j)`` for j < len(pmf). The remaining mass ``tail_mass`` is
    P(J >= len(pmf)); with ``tail_ratio`` r it is spread geometrically,
    P(J = j) = tail_mass * (1 - r) * r**(j - n), otherwise it must be negligible.
    """

    pmf: np.ndarray
    tail_mass: float = 0.0
    tail_ratio: Optional[float] = None

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=float)
        object.__setattr__(self, "pmf", pmf)
        if pmf.ndim != 1 or pmf.size == 0:
            raise InvalidDistribution("pmf must be a nonempty vector")
        if np.any(pmf < 0) or self.tail_mass < 0:
            raise InvalidDistribution("probabilities must be nonnegative")
        total = float(pmf.sum()) + self.tail_mass
        if abs(total - 1.0) > PMF_SUM_TOL:
            raise InvalidDistribution(f"probabilities sum to {total!r}, not 1")
        if self.tail_ratio is None:
            if self.tail_mass >= UNTYPED_TAIL_TOL:
                raise InvalidDistribution(
                    "tail mass beyond the cutoff is not negligible; attach a geometric tail"
                )
        else:
            if not 0.0 <= self.tail_ratio < 1.0:
                raise InvalidDistribution("geometric tail ratio must lie in [0, 1)")
            if self.tail_mass >= 0.5:
                raise InvalidDistribution("geometric tail must carry less than half the mass")

    @classmethod
    def from_mapping(cls, mapping: Dict[int, float]) -> "JDistribution":
        if not mapping or min(mapping) < 0:
            raise InvalidDistribution("pmf keys must be nonnegative integers")
        pmf = np.zeros(max(mapping) + 1)
        for j, prob in mapping.items():
            pmf[j] = prob
        return cls(pmf)

    @property
    def n(self) -> int:
        return self.pmf.size

    def ge(self) -> np.ndarray:
        """P(J >= j) for j = 0 .. n-1."""
        return np.cumsum(self.pmf[::-1])[::-1] + self.tail_mass

    def le(self) -> np.ndarray:
        """P(J <= j) for j = 0 .. n-1."""
        return np.cumsum(self.pmf)

    def tail_first_moment(self) -> float:
        """E[J ; J >= n]."""
        if self.tail_mass == 0.0:
            return 0.0
        if self.tail_ratio is None:
            return self.tail_mass * self.n
        r = self.tail_ratio
        return self.tail_mass * (self.n + r / (1.0 - r))

    def tail_ge_sum(self) -> float:
        """Sum over j >= n of P(J >= j)."""
        if self.tail_ratio is None:
            return self.tail_mass
        return self.tail_mass / (1.0 - self.tail_ratio)

    def mean(self) -> float:
        j = np.arange(self.n)
        return float(np.dot(j, self.pmf)) + self.tail_first_moment()

    def smallest_median(self) -> int:
        """min{m : P(J <= m) >= 1/2}; always inside the explicit range."""
        return int(np.argmax(self.le() >= 0.5))


@dataclass(frozen=True)
class GeometricSpec:
    """delta = tau - (lag - 1) ~ Geometric(p) on {1, 2, ...}."""

    p: float
    k: int
    lag: int

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise PlanInvalid(f"geometric p must lie in (0, 1], got {self.p}")
        if self.k < 0 or self.lag < 1:
            raise PlanInvalid("geometric spec needs k >= 0 and lag >= 1")

    @property
    def q(self) -> float:
        return 1.0 - self.p


@dataclass(frozen=True, eq=False)
class TauPMF:
    """P(tau = t) at index t (zero below the lag) plus unabsorbed residual mass."""

    probs: np.ndarray
    residual: float
    lag: int


def check_transition_matrix(matrix: Any) -> np.ndarray:
    P = np.asarray(matrix, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
        raise InvalidMatrix(f"transition matrix must be square, got shape {P.shape}")
    if np.any(P < 0):
        raise InvalidMatrix("transition matrix has negative entries")
    bad = np.flatnonzero(np.abs(P.sum(axis=1) - 1.0) > ROW_SUM_TOL)
    if bad.size:
        raise InvalidMatrix(
            f"rows {bad.tolist()} do not sum to 1 (sums {P.sum(axis=1)[bad].tolist()})"
        )
    return P


def check_probability_vector(vector: Any, n: int, name: str) -> np.ndarray:
    v = np.asarray(vector, dtype=float)
    if v.shape != (n,) or np.any(v < 0) or abs(v.sum() - 1.0) > PMF_SUM_TOL:
        raise InvalidDistribution(f"{name} must be a probability vector of length {n}")
    return v


@dataclass(frozen=True, eq=False)
class DiscreteChain:
    transition_matrix: np.ndarray
    initial_vector: np.ndarray
    stationary_vector: np.ndarray

    def __post_init__(self):
        P = check_transition_matrix(self.transition_matrix)
        n = P.shape[0]
        if n > ORACLE_MAX_STATES:
            raise StateSpaceTooLarge(f"oracle chains are limited to {ORACLE_MAX_STATES} states, got {n}")
        init = check_probability_vector(self.initial_vector, n, "initial_vector")
        pi = check_probability_vector(self.stationary_vector, n, "stationary_vector")
        if np.max(np.abs(pi @ P - pi)) > STATIONARY_TOL:
            raise InvalidMatrix("stationary_vector is not a left fixed point of the matrix")
        object.__setattr__(self, "transition_matrix", P)
        object.__setattr__(self, "initial_vector", init)
        object.__setattr__(self, "stationary_vector", pi)

    @property
    def n(self) -> int:
        return self.transition_matrix.shape[0]


@dataclass(frozen=True)
class GaussianTarget:
    """Isotropic Gaussian N(mean, scale^2 I) in ``dimension`` coordinates."""

    dimension: int
    mean: float = 0.0
    scale: float = 1.0

    def log_density(self, x: np.ndarray) -> float:
        return float(np.sum(stats.norm.logpdf(x, loc=self.mean, scale=self.scale)))


@dataclass(frozen=True, eq=False)
class DiscreteTarget:
    transition_matrix: np.ndarray
    stationary_vector: Optional[np.ndarray] = None


@dataclass(frozen=True)
class IsingTarget:
    side: int
    beta: float


TargetSpec = Union[GaussianTarget, DiscreteTarget, IsingTarget]
