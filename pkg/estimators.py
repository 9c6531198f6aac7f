"""
Unbiased estimators of E_pi[h] from one L-lag coupled trace.

With J = J_{k,L} and Delta_{k,j} = h(X_{k+jL}) - h(Y_{k+jL}):

    forward   h(X_k) + sum_{j=1..J} [h(X_{k+jL}) - h(Y_{k+(j-1)L})]
    backward  h(X_{k+JL}) + sum_{j=0..J-1} Delta_{k,j}
    cv        backward - sum_{j=0..m} Delta_{k,j}      (m = -1: no control variate)

The time-averaged forms average the backward (or cv) value over burn-ins
t = k..r, each with its own J_{t,L}.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Sequence, Tuple

import numpy as np

from coupling import j_value
from errors import ConfigError, IndexOutOfTrace, MissingTau, PlanInvalid, TooFewProcesses
from models import EstimatorInput, State, TestFunction

logger = logging.getLogger(__name__)


# Named test functions (resolvable from config strings)

@dataclass(frozen=True)
class Identity:
    def __call__(self, state: State) -> np.ndarray:
        return np.ravel(np.asarray(state, dtype=float))


@dataclass(frozen=True)
class Coordinate:
    index: int

    def __call__(self, state: State) -> float:
        return float(np.ravel(state)[self.index])


@dataclass(frozen=True)
class Indicator:
    value: int

    def __call__(self, state: State) -> float:
        return float(state == self.value)


@dataclass(frozen=True)
class Magnetization:
    def __call__(self, state: State) -> float:
        return float(np.mean(state))


def resolve_test_function(name: str) -> TestFunction:
    """`identity`, `coordinate:<i>`, `indicator:<state>` or `magnetization`."""
    head, _, arg = name.partition(":")
    try:
        if head == "identity" and not arg:
            return Identity()
        if head == "magnetization" and not arg:
            return Magnetization()
        if head == "coordinate":
            return Coordinate(int(arg))
        if head == "indicator":
            return Indicator(int(arg))
    except ValueError:
        pass
    raise ConfigError(
        f"unknown test function {name!r}; use identity, coordinate:<i>, indicator:<s> or magnetization"
    )


# Helpers

def _values(inp: EstimatorInput, h: TestFunction) -> Tuple[np.ndarray, np.ndarray, int]:
    trace = inp.trace
    if trace.tau is None:
        raise MissingTau("estimators need a trace whose chains met")
    hx, hy = trace.values(h)
    return hx, hy, trace.tau


def _check(hx: np.ndarray, hy: np.ndarray, x_last: int, y_last: int) -> None:
    if x_last >= len(hx) or y_last >= len(hy):
        raise IndexOutOfTrace(
            f"estimator needs X up to index {x_last} and Y up to {y_last}; "
            f"trace holds {len(hx)} X and {len(hy)} Y states"
        )


def _backward_at(hx, hy, tau: int, t: int, lag: int) -> np.ndarray:
    J = j_value(tau, t, lag)
    _check(hx, hy, t + J * lag, t + (J - 1) * lag)
    idx = t + lag * np.arange(J)
    return hx[t + J * lag] + (hx[idx] - hy[idx]).sum(axis=0)


def _cv_sum(hx, hy, t: int, lag: int, m_hat: int) -> np.ndarray:
    if m_hat < -1:
        raise PlanInvalid(f"control-variate truncation must be >= -1, got {m_hat}")
    if m_hat == -1:
        return np.zeros(hx.shape[1])
    _check(hx, hy, t + m_hat * lag, t + m_hat * lag)
    idx = t + lag * np.arange(m_hat + 1)
    return (hx[idx] - hy[idx]).sum(axis=0)


# Estimators

def h_forward(inp: EstimatorInput, h: TestFunction) -> np.ndarray:
    hx, hy, tau = _values(inp, h)
    k, lag = inp.k, inp.trace.lag
    J = j_value(tau, k, lag)
    _check(hx, hy, k + J * lag, k + (J - 1) * lag)
    j = np.arange(1, J + 1)
    return hx[k] + (hx[k + j * lag] - hy[k + (j - 1) * lag]).sum(axis=0)


def h_backward(inp: EstimatorInput, h: TestFunction) -> np.ndarray:
    hx, hy, tau = _values(inp, h)
    return _backward_at(hx, hy, tau, inp.k, inp.trace.lag)


def h_cv_single(inp: EstimatorInput, h: TestFunction, m_hat: int) -> np.ndarray:
    """Backward estimator minus the first m_hat + 1 same-time differences."""
    hx, hy, tau = _values(inp, h)
    lag = inp.trace.lag
    return _backward_at(hx, hy, tau, inp.k, lag) - _cv_sum(hx, hy, inp.k, lag, m_hat)


def h_timeavg(inp: EstimatorInput, h: TestFunction) -> np.ndarray:
    hx, hy, tau = _values(inp, h)
    lag = inp.trace.lag
    # for t > tau - L every J_{t,L} is 0 and the term is just h(X_t)
    terms = [_backward_at(hx, hy, tau, t, lag) for t in range(inp.k, inp.end + 1)]
    return np.mean(terms, axis=0)


def h_timeavg_cv(inp: EstimatorInput, h: TestFunction, m_hats: Sequence[int]) -> np.ndarray:
    window = range(inp.k, inp.end + 1)
    if len(m_hats) != len(window):
        raise PlanInvalid(f"need one truncation per t in [{inp.k}, {inp.end}], got {len(m_hats)}")
    hx, hy, _ = _values(inp, h)
    lag = inp.trace.lag
    corrections = [_cv_sum(hx, hy, t, lag, int(m)) for t, m in zip(window, m_hats)]
    return h_timeavg(inp, h) - np.mean(corrections, axis=0)


ESTIMATORS: Dict[str, Callable[..., np.ndarray]] = {
    "forward": h_forward,
    "backward": h_backward,
    "cv": h_cv_single,
    "timeavg": h_timeavg,
    "timeavg_cv": h_timeavg_cv,
}


# Leave-one-out medians

def loo_median(all_j_tildes: Sequence[int], q: int) -> int:
    """Lower middle order statistic of every value except the q-th."""
    if len(all_j_tildes) < 2:
        raise TooFewProcesses(f"leave-one-out median needs >= 2 processes, got {len(all_j_tildes)}")
    others = sorted(v for i, v in enumerate(all_j_tildes) if i != q)
    return int(np.floor(others[(len(others) - 1) // 2]))


def loo_medians(j_tildes: Sequence[int]) -> np.ndarray:
    """loo_median for every q at once."""
    values = np.asarray(j_tildes, dtype=np.int64)
    Q = values.size
    if Q < 2:
        raise TooFewProcesses(f"leave-one-out median needs >= 2 processes, got {Q}")
    ordered = np.sort(values, kind="stable")
    ranks = np.empty(Q, dtype=np.int64)
    ranks[np.argsort(values, kind="stable")] = np.arange(Q)
    mid = (Q - 2) // 2
    upper = ordered[min(mid + 1, Q - 1)]
    return np.where(ranks > mid, ordered[mid], upper)
