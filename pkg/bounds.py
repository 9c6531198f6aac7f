"""
Total-variation bounds from the law of the meeting count J.

Two bounds are compared throughout:

* the old bound, E[J];
* the new bound, sum_{j>=1} min{P(J >= j), P(J <= j)}, which never exceeds
  the old one and equals it exactly when 2 P(J=0) >= 1 - P(J=1).

The new bound has several equivalent closed forms (median of J, median of
J~ = J - xi, survival of tau, S_j). All are implemented so they can be
checked against each other.
"""
import logging
import math
from typing import Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from errors import InvalidSurvival, TailTooHeavy, TooFewProcesses
from models import GeometricSpec, JDistribution, MeetingStats

logger = logging.getLogger(__name__)

SERIES_TOL = 1e-14
# P(J >= n) below this ends the explicit part of a geometric J law
GEOMETRIC_TAIL_CUTOFF = 1e-13
MAX_EXPLICIT_ATOMS = 1_000_000


def _prob(jd: JDistribution, j: int) -> float:
    if j < jd.n:
        return float(jd.pmf[j])
    if jd.tail_ratio is None:
        return 0.0
    r = jd.tail_ratio
    return jd.tail_mass * (1.0 - r) * r ** (j - jd.n)


def _expected_abs_dev(mean: float, values: np.ndarray, probs: np.ndarray, m: int) -> float:
    # E|V - m| = E[V] - m + 2 E[(m - V)+]; only atoms below m need to be explicit
    below = values < m
    return mean - m + 2.0 * float(np.dot(m - values[below], probs[below]))


# Exact bounds from a J distribution

def old_bound_exact(jd: JDistribution) -> float:
    return jd.mean()


def new_bound_exact(jd: JDistribution) -> float:
    ge, le = jd.ge(), jd.le()
    explicit = float(np.minimum(ge[1:], le[1:]).sum())
    # past the explicit atoms P(J >= j) <= tail < 1/2 < P(J <= j)
    return explicit + jd.tail_ge_sum()


def smallest_median(jd: JDistribution) -> int:
    return jd.smallest_median()


def new_bound_median_form(jd: JDistribution) -> float:
    m = jd.smallest_median()
    le = jd.le()
    values = np.arange(jd.n)
    e_abs = _expected_abs_dev(jd.mean(), values, jd.pmf, m)
    p_pos = 1.0 - float(jd.pmf[0])
    above = 1.0 - float(le[m])
    below = float(le[m - 1]) if m > 0 else 0.0
    return e_abs + p_pos - max(above, below)


def _jtilde_pmf(jd: JDistribution) -> Tuple[np.ndarray, np.ndarray]:
    """Support -1 .. n-1 of J~ = J - xi and its probabilities."""
    ext = np.concatenate(([0.0], jd.pmf, [_prob(jd, jd.n)]))
    return np.arange(-1, jd.n), 0.5 * ext[:-1] + 0.5 * ext[1:]


def new_bound_jtilde_form(jd: JDistribution) -> float:
    values, probs = _jtilde_pmf(jd)
    m = int(values[np.argmax(np.cumsum(probs) >= 0.5)])
    e_abs = _expected_abs_dev(jd.mean() - 0.5, values, probs, m)
    return e_abs + (1.0 - float(jd.pmf[0])) - 0.5


def new_bound_sj_form(jd: JDistribution) -> float:
    """sum_{j>=1} min{S_j, 1 - S_j} + P(J > 0) / 2, with S_j = P(J~ >= j)."""
    s = jd.ge()[1:] - 0.5 * jd.pmf[1:]
    explicit = float(np.minimum(s, 1.0 - s).sum())
    tail = jd.tail_ge_sum() - 0.5 * jd.tail_mass
    return explicit + tail + 0.5 * (1.0 - float(jd.pmf[0]))


def optimal_eta(jd: JDistribution, j_max: int) -> np.ndarray:
    """eta_j = 1{S_j > 1/2} for j = 0 .. j_max."""
    j = np.arange(j_max + 1)
    ge_explicit = jd.ge()
    ge = np.array([ge_explicit[i] if i < jd.n else _tail_ge(jd, i) for i in j])
    pj = np.array([_prob(jd, i) for i in j])
    return ((ge - 0.5 * pj) > 0.5).astype(int)


def _tail_ge(jd: JDistribution, j: int) -> float:
    if jd.tail_ratio is None:
        return 0.0
    return jd.tail_mass * jd.tail_ratio ** (j - jd.n)


def bounds_equal_predicate(jd: JDistribution) -> bool:
    return 2.0 * _prob(jd, 0) >= 1.0 - _prob(jd, 1)


# Survival of tau

def _survival_array(tau_survival: Union[Mapping[int, float], Sequence[float]]) -> np.ndarray:
    """s[j] = P(tau > k + jL) for j = 0 .. n (index 0 may be absent from a mapping)."""
    if isinstance(tau_survival, Mapping):
        if not tau_survival:
            raise InvalidSurvival("empty survival map")
        n = max(tau_survival)
        s = np.array([tau_survival.get(j, 1.0 if j == 0 else np.nan) for j in range(n + 1)])
        if np.isnan(s).any():
            raise InvalidSurvival("survival map has gaps")
    else:
        s = np.asarray(tau_survival, dtype=float)
    if s.ndim != 1 or s.size < 2:
        raise InvalidSurvival("need survival values for at least j = 0, 1")
    if np.any(s[1:] < -1e-15) or np.any(s[1:] > 1.0 + 1e-15):
        raise InvalidSurvival("survival values must lie in [0, 1]")
    if np.any(np.diff(s[1:]) > 1e-15):
        raise InvalidSurvival("survival values must be nonincreasing in j")
    return s


def new_bound_tau_form(
    tau_survival: Union[Mapping[int, float], Sequence[float]],
    k: int,
    L: int,
    tail_ratio: Optional[float] = None,
) -> float:
    """
    0.5 sum_{j>=1} [1 - |s(j+1) + s(j) - 1|] + 0.5 s(1),  s(j) = P(tau > k + jL).

    Values beyond the last entry are zero unless ``tail_ratio`` r is given,
    in which case s(j+1) = r s(j) from there on.
    """
    s = _survival_array(tau_survival)
    last = float(s[-1])
    if tail_ratio is None:
        if last >= 1e-12:
            logger.warning("survival at j=%d is %.3g; treating the rest as zero (k=%d, L=%d)",
                           s.size - 1, last, k, L)
        nxt = np.append(s[2:], 0.0)
        total = float(np.sum(1.0 - np.abs(nxt + s[1:] - 1.0)))
        # j = n term with s(n+1) = 0, further terms vanish
    else:
        nxt = s[2:]
        total = float(np.sum(1.0 - np.abs(nxt + s[1:-1] - 1.0)))
        if last * (1.0 + tail_ratio) > 1.0:
            raise InvalidSurvival("geometric tail must start below survival 1/2")
        total += last * (1.0 + tail_ratio) / (1.0 - tail_ratio)
    return 0.5 * total + 0.5 * float(s[1])


def zeta_criterion(tau_survival: Union[Mapping[int, float], Sequence[float]]) -> bool:
    """P(zeta <= L) >= P(zeta > 2L) with zeta = tau - k; same as bounds_equal_predicate."""
    s = _survival_array(tau_survival)
    s2 = float(s[2]) if s.size > 2 else 0.0
    return 1.0 - float(s[1]) >= s2


def j_distribution_from_survival(s: np.ndarray, tail_ratio: Optional[float] = None) -> JDistribution:
    """JDistribution with P(J >= j) = s[j] for j >= 1."""
    ge = np.append(1.0, np.asarray(s[1:], dtype=float))
    pmf = np.clip(ge[:-1] - ge[1:], 0.0, None)
    if tail_ratio is None:
        return JDistribution(np.append(pmf, ge[-1]))
    return JDistribution(pmf, tail_mass=float(ge[-1]), tail_ratio=tail_ratio)


# Algorithm over Q processes

def empirical_bounds_arrays(j: np.ndarray, medians: np.ndarray) -> Tuple[float, float]:
    """(mean J, e + p - max(g, s)) from per-process J and leave-one-out medians."""
    j = np.asarray(j, dtype=float)
    if j.size < 2:
        raise TooFewProcesses(f"empirical bounds need >= 2 processes, got {j.size}")
    m = np.asarray(medians, dtype=float)
    if np.any(m < 0):
        logger.debug("clamping %d negative leave-one-out medians to 0", int(np.sum(m < 0)))
        m = np.maximum(m, 0.0)
    e = float(np.mean(np.abs(j - m)))
    p = float(np.mean(j > 0))
    g = float(np.mean(j > m))
    s = float(np.mean(j < m))
    return float(np.mean(j)), e + p - max(g, s)


def empirical_bounds(stats: Sequence[MeetingStats], loo_medians: Sequence[int]) -> Tuple[float, float]:
    if len(stats) != len(loo_medians):
        raise TooFewProcesses("need one leave-one-out median per process")
    return empirical_bounds_arrays(np.array([st.j for st in stats]), np.asarray(loo_medians))


# Geometric meeting times

def _log_q(spec: GeometricSpec) -> float:
    return math.log1p(-spec.p)


def _one_minus_q_pow(spec: GeometricSpec, power: int) -> float:
    return -math.expm1(power * _log_q(spec))


def geometric_j_distribution(spec: GeometricSpec) -> JDistribution:
    if spec.p == 1.0:
        return JDistribution(np.array([1.0]))
    log_q, L, k = _log_q(spec), spec.lag, spec.k
    # P(J >= j) = q^{k+1+L(j-1)} for j >= 1
    needed = math.ceil((math.log(GEOMETRIC_TAIL_CUTOFF) / log_q - (k + 1)) / L) + 2
    n = min(max(needed, 2), MAX_EXPLICIT_ATOMS)
    ge = np.exp(log_q * (k + 1 + L * (np.arange(1, n + 1) - 1.0)))
    if ge[-1] >= 0.5:
        raise TailTooHeavy(f"geometric J law with p={spec.p} needs more than {n} explicit atoms")
    pmf = np.empty(n)
    pmf[0] = _one_minus_q_pow(spec, k + 1)
    pmf[1:] = ge[:-1] * _one_minus_q_pow(spec, L)
    return JDistribution(pmf, tail_mass=float(ge[-1]), tail_ratio=math.exp(L * log_q))


def geometric_tau_survival(spec: GeometricSpec, n: int) -> np.ndarray:
    """P(tau > k + jL) for j = 0 .. n, with tau - (L - 1) ~ Geometric(p)."""
    if spec.p == 1.0:
        s = np.zeros(n + 1)
        s[0] = 1.0 if spec.k < spec.lag else 0.0
        return s
    exponent = np.maximum(spec.k + 1 + spec.lag * (np.arange(n + 1) - 1.0), 0.0)
    return np.exp(_log_q(spec) * exponent)


def geometric_old_bound(spec: GeometricSpec) -> float:
    """q^{k+1} / (1 - q^L)."""
    if spec.p == 1.0:
        return 0.0
    return math.exp((spec.k + 1) * _log_q(spec)) / _one_minus_q_pow(spec, spec.lag)


def geometric_median_index(spec: GeometricSpec) -> int:
    L, k = spec.lag, spec.k
    if spec.p == 1.0:
        return math.floor((L - k - 1) / L)
    q_L = math.exp(L * _log_q(spec))
    return math.floor((L - k - 1) / L - math.log1p(q_L) / (L * _log_q(spec)))


def geometric_new_bound(spec: GeometricSpec) -> float:
    if spec.p == 1.0:
        return 0.0
    m = geometric_median_index(spec)
    if m <= 0:
        return geometric_old_bound(spec)
    log_q, L = _log_q(spec), spec.lag
    head = math.exp((spec.k + 1 + L) * log_q)
    bracket = 1.0 - math.exp(m * L * log_q) - math.exp((m - 1) * L * log_q)
    return m - head * bracket / _one_minus_q_pow(spec, L)


def geometric_new_bound_series(spec: GeometricSpec, chunk: int = 4096) -> float:
    """The survival series for geometric tau, summed until terms fall below 1e-14."""
    if spec.p == 1.0:
        return 0.0
    log_q, L, k = _log_q(spec), spec.lag, spec.k
    q_L = math.exp(L * log_q)
    total = 0.0
    start = 1
    while True:
        j = np.arange(start, start + chunk, dtype=float)
        s_j = np.exp(log_q * (k + 1 + L * (j - 1)))
        s_next = s_j * q_L
        terms = 1.0 - np.abs(s_next + s_j - 1.0)
        small = np.flatnonzero((terms < SERIES_TOL) & (s_j + s_next < 1.0))
        if small.size:
            cut = small[0]
            total += float(terms[:cut].sum())
            # remaining terms are s_j (1 + q^L), a geometric sequence in j
            total += float(s_j[cut]) * (1.0 + q_L) / (1.0 - q_L)
            break
        total += float(terms.sum())
        start += chunk
        if start > MAX_EXPLICIT_ATOMS:
            raise TailTooHeavy(f"geometric series with p={spec.p} did not converge")
    return 0.5 * total + 0.5 * math.exp((k + 1) * log_q)
