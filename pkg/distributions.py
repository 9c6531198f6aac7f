"""
Distribution primitives with a sampler and a pointwise log density.

These are what the maximal coupling needs: draw from p, evaluate p and q at
the draw. Anything else passed to the coupling is rejected up front.
"""
from dataclasses import dataclass
from typing import Any, Tuple

import numpy as np
from scipy import stats

from errors import InvalidDistribution, NonEvaluableDensity

# rejection loop guard; with overlap > 0 this is never approached
MAX_REJECTION_TRIES = 1_000_000


@dataclass(frozen=True, eq=False)
class Categorical:
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-10:
            raise InvalidDistribution("categorical probabilities must be a probability vector")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "_cdf", np.cumsum(probs))

    def sample(self, rng: np.random.Generator) -> int:
        # inverse cdf; the clamp covers round-off in the last cumulative entry
        idx = int(np.searchsorted(self._cdf, rng.random(), side="right"))
        return min(idx, self.probs.size - 1)

    def logpdf(self, x: int) -> float:
        with np.errstate(divide="ignore"):
            return float(np.log(self.probs[x]))


@dataclass(frozen=True)
class Bernoulli:
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise InvalidDistribution(f"Bernoulli p must lie in [0, 1], got {self.p}")

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.random() < self.p)

    def logpdf(self, x: int) -> float:
        prob = self.p if x == 1 else 1.0 - self.p
        with np.errstate(divide="ignore"):
            return float(np.log(prob))


@dataclass(frozen=True)
class Normal:
    mean: float
    scale: float

    def sample(self, rng: np.random.Generator) -> float:
        return float(self.mean + self.scale * rng.standard_normal())

    def logpdf(self, x: float) -> float:
        return float(stats.norm.logpdf(x, loc=self.mean, scale=self.scale))


@dataclass(frozen=True, eq=False)
class IsotropicNormal:
    mean: np.ndarray
    scale: float

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        mean = np.asarray(self.mean, dtype=float)
        return mean + self.scale * rng.standard_normal(mean.shape)

    def logpdf(self, x: np.ndarray) -> float:
        return float(np.sum(stats.norm.logpdf(x, loc=self.mean, scale=self.scale)))


def _require_density(dist: Any, name: str) -> None:
    if not (callable(getattr(dist, "sample", None)) and callable(getattr(dist, "logpdf", None))):
        raise NonEvaluableDensity(
            f"{name} ({type(dist).__name__}) needs both sample(rng) and logpdf(x)"
        )


def _same(a: Any, b: Any) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.array_equal(a, b)
    return a == b


def maximal_coupling_sample(p: Any, q: Any, rng: np.random.Generator) -> Tuple[Any, Any, bool]:
    """
    Draw (X, Y) with X ~ p, Y ~ q and P(X == Y) = 1 - TV(p, q).

    X is drawn from p and reused for q when u * p(X) <= q(X); otherwise Y
    is drawn from q by rejection until u' * q(Y) > p(Y).
    """
    _require_density(p, "p")
    _require_density(q, "q")

    x = p.sample(rng)
    if np.log(rng.random()) + p.logpdf(x) <= q.logpdf(x):
        return x, x, True

    for _ in range(MAX_REJECTION_TRIES):
        y = q.sample(rng)
        if np.log(rng.random()) + q.logpdf(y) > p.logpdf(y):
            return x, y, _same(x, y)
    raise NonEvaluableDensity("rejection step of the maximal coupling did not terminate")
