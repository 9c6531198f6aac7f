"""
Coupled transition kernels.

Every kernel exposes a marginal step and a joint step whose two outputs each
follow the marginal step's law. Joint steps from equal states return equal
states, so the diagonal is absorbing and meeting is an exact event.
"""
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from numba import njit

from distributions import Categorical, IsotropicNormal, Normal, maximal_coupling_sample
from errors import EvaluationError, InvalidMatrix, PlanInvalid
from models import (
    DiscreteTarget,
    GaussianTarget,
    InitialSampler,
    IsingTarget,
    State,
    check_probability_vector,
    check_transition_matrix,
)
from schemas import (
    DiscreteKernelConfig,
    GibbsKernelConfig,
    IsingKernelConfig,
    KernelConfig,
    RWMKernelConfig,
)

logger = logging.getLogger(__name__)


class CoupledKernel(ABC):
    family: str = ""

    @abstractmethod
    def marginal_step(self, x: State, rng: np.random.Generator) -> State:
        ...

    @abstractmethod
    def joint_step(self, x: State, y: State, rng: np.random.Generator) -> Tuple[State, State]:
        ...

    def states_equal(self, a: State, b: State) -> bool:
        return a == b

    def encode_state(self, state: State) -> str:
        return str(state)

    def decode_state(self, text: str) -> State:
        return int(text)


class _VectorStateMixin:
    def states_equal(self, a: np.ndarray, b: np.ndarray) -> bool:
        return np.array_equal(a, b)

    def encode_state(self, state: np.ndarray) -> str:
        return ",".join(format(float(v), ".17g") for v in np.ravel(state))

    def decode_state(self, text: str) -> np.ndarray:
        return np.array([float(v) for v in text.split(",")])


# Discrete transition matrix

@dataclass(frozen=True, eq=False)
class DiscreteKernel(CoupledKernel):
    transition_matrix: np.ndarray
    family = "discrete"

    def __post_init__(self):
        P = check_transition_matrix(self.transition_matrix)
        object.__setattr__(self, "transition_matrix", P)
        object.__setattr__(self, "_rows", tuple(Categorical(row) for row in P))

    def marginal_step(self, x: int, rng: np.random.Generator) -> int:
        return self._rows[x].sample(rng)

    def joint_step(self, x: int, y: int, rng: np.random.Generator) -> Tuple[int, int]:
        if x == y:
            z = self.marginal_step(x, rng)
            return z, z
        x_new, y_new, _ = maximal_coupling_sample(self._rows[x], self._rows[y], rng)
        return x_new, y_new


def discrete_matrix_kernel(target: DiscreteTarget) -> DiscreteKernel:
    if target.stationary_vector is not None:
        P = check_transition_matrix(target.transition_matrix)
        pi = check_probability_vector(target.stationary_vector, P.shape[0], "stationary_vector")
        if np.max(np.abs(pi @ P - pi)) > 1e-10:
            raise InvalidMatrix("stationary_vector is not a left fixed point of the matrix")
    return DiscreteKernel(target.transition_matrix)


# Random-walk Metropolis

@dataclass(frozen=True, eq=False)
class RWMKernel(_VectorStateMixin, CoupledKernel):
    """
    Gaussian random-walk Metropolis.

    The joint step maximally couples the two proposals and decides both
    accept/reject steps with one shared uniform.
    """

    log_density: Callable[[np.ndarray], float]
    proposal_scale: float
    family = "rwm"

    def _log_target(self, x: np.ndarray) -> float:
        try:
            with np.errstate(over="raise", invalid="raise"):
                value = float(self.log_density(x))
        except (FloatingPointError, OverflowError) as exc:
            raise EvaluationError(f"log density failed at {x!r}: {exc}") from exc
        if math.isnan(value) or value == math.inf:
            raise EvaluationError(f"log density returned {value} at {x!r}")
        return value

    def _accept(self, log_u: float, current: np.ndarray, proposal: np.ndarray) -> np.ndarray:
        if log_u <= self._log_target(proposal) - self._log_target(current):
            return proposal
        return current

    def marginal_step(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        proposal = IsotropicNormal(x, self.proposal_scale).sample(rng)
        return self._accept(np.log(rng.random()), x, proposal)

    def joint_step(self, x, y, rng):
        if self.states_equal(x, y):
            z = self.marginal_step(x, rng)
            return z, z
        px, py, _ = maximal_coupling_sample(
            IsotropicNormal(x, self.proposal_scale),
            IsotropicNormal(y, self.proposal_scale),
            rng,
        )
        log_u = np.log(rng.random())
        return self._accept(log_u, x, px), self._accept(log_u, y, py)


def coupled_rwm_kernel(target: GaussianTarget, proposal_scale: float) -> RWMKernel:
    if proposal_scale <= 0:
        raise PlanInvalid(f"proposal_scale must be positive, got {proposal_scale}")
    return RWMKernel(target.log_density, proposal_scale)


# Bivariate Gaussian Gibbs

@dataclass(frozen=True)
class GibbsGaussianKernel(_VectorStateMixin, CoupledKernel):
    """Systematic-scan Gibbs for a standard bivariate Gaussian with correlation rho."""

    rho: float
    family = "gibbs"

    def _conditional(self, other: float) -> Normal:
        return Normal(self.rho * other, math.sqrt(1.0 - self.rho ** 2))

    def marginal_step(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        first = self._conditional(x[1]).sample(rng)
        second = self._conditional(first).sample(rng)
        return np.array([first, second])

    def joint_step(self, x, y, rng):
        if self.states_equal(x, y):
            z = self.marginal_step(x, rng)
            return z, z
        x1, y1, _ = maximal_coupling_sample(self._conditional(x[1]), self._conditional(y[1]), rng)
        x2, y2, _ = maximal_coupling_sample(self._conditional(x1), self._conditional(y1), rng)
        return np.array([x1, x2]), np.array([y1, y2])


def coupled_gibbs_gaussian(rho: float) -> GibbsGaussianKernel:
    if not -1.0 < rho < 1.0:
        raise PlanInvalid(f"rho must lie in (-1, 1), got {rho}")
    return GibbsGaussianKernel(rho)


# Ising single-site Gibbs

@njit(cache=True, nogil=True)
def heat_bath_up(neighbour_sum, beta):
    """P(spin = +1 | neighbours) under the heat-bath update."""
    return 1.0 / (1.0 + math.exp(-2.0 * beta * neighbour_sum))


@njit(cache=True, nogil=True)
def _neighbour_sum(spins, i, j):
    n = spins.shape[0]
    return spins[(i - 1) % n, j] + spins[(i + 1) % n, j] + spins[i, (j - 1) % n] + spins[i, (j + 1) % n]


@njit(cache=True, nogil=True)
def _ssg_sweep(spins, uniforms, beta):
    n = spins.shape[0]
    out = spins.copy()
    for i in range(n):
        for j in range(n):
            out[i, j] = 1 if uniforms[i, j] < heat_bath_up(_neighbour_sum(out, i, j), beta) else -1
    return out


@njit(cache=True, nogil=True)
def _ssg_coupled_sweep(x, y, uniforms, beta):
    n = x.shape[0]
    xo = x.copy()
    yo = y.copy()
    for i in range(n):
        for j in range(n):
            u = uniforms[i, j]
            xo[i, j] = 1 if u < heat_bath_up(_neighbour_sum(xo, i, j), beta) else -1
            yo[i, j] = 1 if u < heat_bath_up(_neighbour_sum(yo, i, j), beta) else -1
    return xo, yo


@dataclass(frozen=True)
class IsingKernel(CoupledKernel):
    """
    Heat-bath sweeps over a side x side periodic lattice of +/-1 spins.

    Sites are visited row-major; the joint sweep feeds both lattices the same
    uniform at each site, which maximally couples the two conditional
    Bernoulli laws.
    """

    side: int
    beta: float
    family = "ising"

    def marginal_step(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return _ssg_sweep(x, rng.random((self.side, self.side)), self.beta)

    def joint_step(self, x, y, rng):
        uniforms = rng.random((self.side, self.side))
        if self.states_equal(x, y):
            z = _ssg_sweep(x, uniforms, self.beta)
            return z, z
        return _ssg_coupled_sweep(x, y, uniforms, self.beta)

    def states_equal(self, a: np.ndarray, b: np.ndarray) -> bool:
        return np.array_equal(a, b)

    def encode_state(self, state: np.ndarray) -> str:
        return "".join("+" if s > 0 else "-" for s in np.ravel(state))

    def decode_state(self, text: str) -> np.ndarray:
        flat = np.array([1 if c == "+" else -1 for c in text], dtype=np.int64)
        return flat.reshape(self.side, self.side)


def ising_ssg_kernel(side: int, beta: float) -> IsingKernel:
    target = IsingTarget(side, beta)
    if target.side < 2:
        raise PlanInvalid(f"lattice side must be >= 2, got {side}")
    if target.beta <= 0:
        raise PlanInvalid(f"beta must be positive, got {beta}")
    return IsingKernel(target.side, target.beta)


# Initial-state samplers; dataclasses so they pickle into worker processes

@dataclass(frozen=True, eq=False)
class CategoricalInitial:
    probs: np.ndarray

    def __call__(self, rng: np.random.Generator) -> int:
        return Categorical(self.probs).sample(rng)


@dataclass(frozen=True)
class GaussianInitial:
    dimension: int
    mean: float
    scale: float

    def __call__(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.scale * rng.standard_normal(self.dimension)


@dataclass(frozen=True)
class IsingInitial:
    side: int
    mode: str = "random"

    def __call__(self, rng: np.random.Generator) -> np.ndarray:
        if self.mode == "all_up":
            return np.ones((self.side, self.side), dtype=np.int64)
        return rng.choice(np.array([-1, 1], dtype=np.int64), size=(self.side, self.side))


def build_kernel(config: KernelConfig) -> Tuple[CoupledKernel, InitialSampler]:
    """Kernel plus the sampler for X_0 and Y_0 described by a config section."""
    if isinstance(config, DiscreteKernelConfig):
        kernel = discrete_matrix_kernel(DiscreteTarget(np.asarray(config.matrix, dtype=float)))
        n = kernel.transition_matrix.shape[0]
        if config.initial is None:
            initial = np.eye(n)[0]
        else:
            initial = check_probability_vector(config.initial, n, "initial")
        return kernel, CategoricalInitial(initial)
    if isinstance(config, RWMKernelConfig):
        target = GaussianTarget(config.dimension, config.target_mean, config.target_scale)
        kernel = coupled_rwm_kernel(target, config.proposal_scale)
        return kernel, GaussianInitial(config.dimension, config.initial_mean, config.initial_scale)
    if isinstance(config, GibbsKernelConfig):
        return (
            coupled_gibbs_gaussian(config.rho),
            GaussianInitial(2, config.initial_mean, config.initial_scale),
        )
    if isinstance(config, IsingKernelConfig):
        return ising_ssg_kernel(config.side, config.beta), IsingInitial(config.side, config.initial)
    raise PlanInvalid(f"kernel family {config.family!r} has no transition kernel")
