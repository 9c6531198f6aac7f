"""
Ground truth for small discrete chains: exact marginals, exact TV distance and
the exact meeting-time law of the maximally coupled lagged pair.

The joint kernel enumerated here is the same coupling the discrete kernel
samples: from (x, y) the pair lands on the diagonal (z, z) with probability
min(P[x, z], P[y, z]) and otherwise on (z, w) with probability
(P[x, z] - P[y, z])+ (P[y, w] - P[x, w])+ / TV(P[x], P[y]).
"""
import logging
from typing import Optional

import numpy as np

from coupling import j_values
from errors import StateSpaceTooLarge, TailTooHeavy
from models import (
    ORACLE_MAX_STATES,
    DiscreteChain,
    JDistribution,
    TauPMF,
    check_probability_vector,
    check_transition_matrix,
)

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-12
MAX_JOINT_STEPS = 100_000


def stationary_vector(matrix) -> np.ndarray:
    """Least-squares solution of pi P = pi with sum(pi) = 1."""
    P = check_transition_matrix(matrix)
    n = P.shape[0]
    system = np.vstack([P.T - np.eye(n), np.ones(n)])
    rhs = np.append(np.zeros(n), 1.0)
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def discrete_chain(matrix, initial: Optional[np.ndarray] = None) -> DiscreteChain:
    """DiscreteChain with its stationary vector filled in; start defaults to state 0."""
    P = check_transition_matrix(matrix)
    n = P.shape[0]
    start = np.eye(n)[0] if initial is None else check_probability_vector(initial, n, "initial_vector")
    return DiscreteChain(P, start, stationary_vector(P))


def random_chain(n: int, rng: np.random.Generator, concentration: float = 1.0) -> DiscreteChain:
    """Dirichlet rows, started from a point mass at a random state."""
    P = rng.dirichlet(np.full(n, concentration), size=n)
    start = np.zeros(n)
    start[rng.integers(n)] = 1.0
    return discrete_chain(P, start)


def marginal_at(chain: DiscreteChain, k: int) -> np.ndarray:
    if k < 0:
        raise ValueError(f"k must be nonnegative, got {k}")
    return chain.initial_vector @ np.linalg.matrix_power(chain.transition_matrix, k)


def tv_exact(chain: DiscreteChain, k: int) -> float:
    return 0.5 * float(np.abs(marginal_at(chain, k) - chain.stationary_vector).sum())


def joint_transition(matrix) -> np.ndarray:
    """n^2 x n^2 kernel of the maximal coupling; pair (x, y) has index x * n + y."""
    P = check_transition_matrix(matrix)
    n = P.shape[0]
    if n > ORACLE_MAX_STATES:
        raise StateSpaceTooLarge(f"joint chain over {n}^2 states is beyond the oracle's reach")
    K = np.zeros((n * n, n * n))
    diagonal = np.arange(n) * (n + 1)
    for x in range(n):
        for y in range(n):
            row = K[x * n + y]
            if x == y:
                row[diagonal] = P[x]
                continue
            overlap = np.minimum(P[x], P[y])
            row[diagonal] = overlap
            tv = 1.0 - overlap.sum()
            if tv > 0:
                excess_x = np.clip(P[x] - P[y], 0.0, None)
                excess_y = np.clip(P[y] - P[x], 0.0, None)
                row += np.outer(excess_x, excess_y).ravel() / tv
    return K


def meeting_time_pmf(chain: DiscreteChain, L: int, max_t: Optional[int] = None) -> TauPMF:
    """
    Exact law of tau (X-time) for the lag-L coupled pair.

    X_L ~ initial P^L and Y_0 ~ initial are independent; the pair then moves
    under the joint kernel and tau is the first visit to the diagonal.
    """
    n = chain.n
    if n > ORACLE_MAX_STATES:
        raise StateSpaceTooLarge(f"oracle chains are limited to {ORACLE_MAX_STATES} states, got {n}")
    K = joint_transition(chain.transition_matrix)
    diagonal = np.arange(n) * (n + 1)
    limit = L + MAX_JOINT_STEPS if max_t is None else max_t

    pair = np.outer(marginal_at(chain, L), chain.initial_vector).ravel()
    probs = [0.0] * L + [float(pair[diagonal].sum())]
    pair[diagonal] = 0.0
    t = L
    while pair.sum() >= RESIDUAL_TOL and t < limit:
        pair = pair @ K
        t += 1
        probs.append(float(pair[diagonal].sum()))
        pair[diagonal] = 0.0
    residual = max(float(pair.sum()), 0.0)
    logger.debug("tau pmf for lag %d: %d atoms, residual %.2e", L, len(probs), residual)
    return TauPMF(np.array(probs), residual, L)


def j_distribution_from_tau(tau_pmf: TauPMF, k: int, L: int) -> JDistribution:
    if tau_pmf.residual >= RESIDUAL_TOL:
        raise TailTooHeavy(
            f"tau pmf leaves {tau_pmf.residual:.3g} unabsorbed mass; increase max_t"
        )
    t = np.arange(tau_pmf.probs.size)
    j = j_values(t, k, L)
    pmf = np.bincount(j, weights=tau_pmf.probs)
    return JDistribution(pmf, tail_mass=tau_pmf.residual)


def tau_survival_from_pmf(tau_pmf: TauPMF, k: int, lag: int, n: Optional[int] = None) -> np.ndarray:
    """P(tau > k + jL) for j = 0 .. n."""
    if n is None:
        n = max(1, -(-(tau_pmf.probs.size - k) // lag) + 1)
    cdf = np.cumsum(tau_pmf.probs)
    t = k + lag * np.arange(n + 1)
    # past the last atom only the residual survives
    return np.clip(1.0 - cdf[np.minimum(t, cdf.size - 1)], 0.0, 1.0)
