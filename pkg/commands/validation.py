"""
The invariant battery behind `validate`.

Each check draws from its own keyed stream, so a given seed always
reproduces the same table. A check that raises a LagCouplingError is
reported as a failure with the error's detail.
"""
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Tuple

import numpy as np
from scipy import stats

from bounds import (
    bounds_equal_predicate,
    new_bound_exact,
    new_bound_jtilde_form,
    new_bound_median_form,
    new_bound_sj_form,
    new_bound_tau_form,
    old_bound_exact,
)
from coupling import run_lagged_coupling
from distributions import Bernoulli, Categorical, Normal, maximal_coupling_sample
from errors import LagCouplingError
from estimators import Identity, h_backward, h_forward
from exact_oracle import j_distribution_from_tau, meeting_time_pmf, random_chain, tv_exact
from kernels import CategoricalInitial, CoupledKernel, DiscreteKernel, IsingKernel, build_kernel
from models import EstimatorInput, JDistribution, LagConfig, check_transition_matrix
from reports import format_checks, write_checks
from runner import VALIDATE_STREAM, seed_stream
from schemas import CheckResult, Config, DiscreteKernelConfig, GeometricKernelConfig
from settings import Settings

logger = logging.getLogger(__name__)

ORACLE_CHAINS = 20
ORACLE_K_MAX = 50
FORM_TOL = 1e-12
DOMINANCE_SLACK = 1e-9
ABSORPTION_DRAWS = 100

Check = Callable[[Config, np.random.Generator], Tuple[bool, str]]

REFERENCE_MATRIX = [[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]]


def check_row_sums(config: Config, rng: np.random.Generator) -> Tuple[bool, str]:
    if not isinstance(config.kernel, DiscreteKernelConfig):
        return True, "no transition matrix in config"
    P = check_transition_matrix(config.kernel.matrix)
    return True, f"{P.shape[0]} rows sum to 1"


def check_forward_backward(config: Config, rng: np.random.Generator) -> Tuple[bool, str]:
    h = Identity()
    worst = 0.0
    for _ in range(config.validation.battery_size):
        chain = random_chain(int(rng.integers(2, 9)), rng)
        lag, k = int(rng.integers(1, 4)), int(rng.integers(0, 11))
        lag_config = LagConfig(lag, config.max_sweeps, CategoricalInitial(chain.initial_vector), horizon=k)
        trace = run_lagged_coupling(DiscreteKernel(chain.transition_matrix), lag_config, rng)
        inp = EstimatorInput(trace, k)
        forward, backward = h_forward(inp, h), h_backward(inp, h)
        scale = max(1.0, float(np.max(np.abs(backward))))
        worst = max(worst, float(np.max(np.abs(forward - backward))) / scale)
    return worst <= FORM_TOL, f"max relative gap {worst:.2e} over {config.validation.battery_size} traces"


def random_j_distribution(rng: np.random.Generator) -> JDistribution:
    n = int(rng.integers(1, 30))
    concentration = float(rng.choice([0.2, 1.0, 5.0]))
    return JDistribution(rng.dirichlet(np.full(n, concentration)))


def _forms(jd: JDistribution) -> Dict[str, float]:
    survival = np.append(jd.ge(), 0.0)
    return {
        "new": new_bound_exact(jd),
        "median": new_bound_median_form(jd),
        "jtilde": new_bound_jtilde_form(jd),
        "sj": new_bound_sj_form(jd),
        "tau": new_bound_tau_form(survival, 0, 1),
    }


def check_form_agreement(config: Config, rng: np.random.Generator) -> Tuple[bool, str]:
    worst = 0.0
    for _ in range(config.validation.battery_size):
        values = list(_forms(random_j_distribution(rng)).values())
        worst = max(worst, max(values) - min(values))
    return worst <= FORM_TOL, f"max spread across forms {worst:.2e}"


def check_equality_predicate(config: Config, rng: np.random.Generator) -> Tuple[bool, str]:
    mismatches = 0
    for _ in range(config.validation.battery_size):
        jd = random_j_distribution(rng)
        equal = abs(old_bound_exact(jd) - new_bound_exact(jd)) <= FORM_TOL
        mismatches += equal != bounds_equal_predicate(jd)
    return mismatches == 0, f"{mismatches} predicate mismatches"


def check_dominance(config: Config, rng: np.random.Generator) -> Tuple[bool, str]:
    violations = 0
    for _ in range(config.validation.battery_size):
        jd = random_j_distribution(rng)
        violations += new_bound_exact(jd) > old_bound_exact(jd) + DOMINANCE_SLACK
    return violations == 0, f"{violations} cases with new > old"


def check_oracle_dominance(config: Config, rng: np.random.Generator) -> Tuple[bool, str]:
    violations, rows = 0, 0
    for _ in range(ORACLE_CHAINS):
        chain = random_chain(int(rng.integers(2, 9)), rng)
        for lag in (1, 2, 3):
            tau_pmf = meeting_time_pmf(chain, lag)
            for k in range(ORACLE_K_MAX + 1):
                jd = j_distribution_from_tau(tau_pmf, k, lag)
                tv, new, old = tv_exact(chain, k), new_bound_exact(jd), old_bound_exact(jd)
                violations += not (tv <= new + DOMINANCE_SLACK and new <= old + DOMINANCE_SLACK)
                rows += 1
    return violations == 0, f"{violations} of {rows} (chain, k, L) rows out of order"


# Kernel faithfulness

def _frozen_pair(kernel: CoupledKernel, config: Config) -> Tuple[Any, Any]:
    if isinstance(kernel, DiscreteKernel):
        return 0, kernel.transition_matrix.shape[0] - 1
    if isinstance(kernel, IsingKernel):
        up = np.ones((kernel.side, kernel.side), dtype=np.int64)
        return up, -up
    dimension = getattr(config.kernel, "dimension", 2)
    return np.zeros(dimension), np.ones(dimension)


def _summary(kernel: CoupledKernel, state: Any) -> float:
    if isinstance(kernel, IsingKernel):
        return float(np.mean(state))
    return float(np.ravel(state)[0])


def _marginal_test(kernel: CoupledKernel, start: Any, joint_draws: List[Any], rng, alpha: float) -> Tuple[bool, str]:
    n = len(joint_draws)
    if isinstance(kernel, DiscreteKernel):
        probs = kernel.transition_matrix[start]
        counts = np.bincount(joint_draws, minlength=probs.size)
        support = probs > 0
        if counts[~support].any():
            return False, "joint step left the marginal support"
        if support.sum() < 2:
            return True, "degenerate row"
        p_value = stats.chisquare(counts[support], probs[support] * n).pvalue
    else:
        reference = [_summary(kernel, kernel.marginal_step(start, rng)) for _ in range(n)]
        p_value = stats.ks_2samp([_summary(kernel, s) for s in joint_draws], reference).pvalue
    return p_value > alpha, f"p={p_value:.3g}"


def check_kernel_faithfulness(config: Config, rng: np.random.Generator) -> Tuple[bool, str]:
    if isinstance(config.kernel, GeometricKernelConfig):
        kernel: CoupledKernel = DiscreteKernel(np.array(REFERENCE_MATRIX))
    else:
        kernel, _ = build_kernel(config.kernel)
    x, y = _frozen_pair(kernel, config)
    draws = config.validation.faithfulness_draws
    pairs = [kernel.joint_step(x, y, rng) for _ in range(draws)]
    ok_x, detail_x = _marginal_test(kernel, x, [p[0] for p in pairs], rng, config.validation.alpha)
    ok_y, detail_y = _marginal_test(kernel, y, [p[1] for p in pairs], rng, config.validation.alpha)

    absorbed = True
    for _ in range(ABSORPTION_DRAWS):
        a, b = kernel.joint_step(x, x, rng)
        absorbed = absorbed and kernel.states_equal(a, b)
    detail = f"{kernel.family}: x {detail_x}, y {detail_y}, diagonal {'kept' if absorbed else 'left'}"
    return ok_x and ok_y and absorbed, detail


def _coupling_pairs() -> List[Tuple[str, Any, Any, float]]:
    p = np.array([0.5, 0.3, 0.2])
    return [
        ("normal", Normal(0.0, 1.0), Normal(1.0, 1.0), float(stats.norm.cdf(0.5) - stats.norm.cdf(-0.5))),
        ("bernoulli", Bernoulli(0.3), Bernoulli(0.6), 0.3),
        ("categorical", Categorical(p), Categorical(p[::-1].copy()), 0.3),
    ]


def check_maximal_coupling(config: Config, rng: np.random.Generator) -> Tuple[bool, str]:
    draws = config.validation.faithfulness_draws
    parts, ok = [], True
    for name, p, q, tv in _coupling_pairs():
        met = sum(maximal_coupling_sample(p, q, rng)[2] for _ in range(draws))
        expected = 1.0 - tv
        sd = np.sqrt(expected * (1.0 - expected) / draws)
        z = (met / draws - expected) / sd
        ok = ok and abs(z) <= 3.0
        parts.append(f"{name} z={z:+.2f}")
    return ok, ", ".join(parts)


CHECKS: List[Tuple[str, Check]] = [
    ("matrix_row_sums", check_row_sums),
    ("forward_backward_identity", check_forward_backward),
    ("bound_forms_agree", check_form_agreement),
    ("equality_predicate", check_equality_predicate),
    ("bound_dominance", check_dominance),
    ("oracle_tv_dominance", check_oracle_dominance),
    ("kernel_faithfulness", check_kernel_faithfulness),
    ("maximal_coupling_rate", check_maximal_coupling),
]


def run_battery(config: Config) -> List[CheckResult]:
    results = []
    for index, (name, check) in enumerate(CHECKS):
        rng = seed_stream(config.seed, VALIDATE_STREAM, index)
        try:
            passed, detail = check(config, rng)
        except LagCouplingError as exc:
            passed, detail = False, f"{type(exc).__name__}: {exc.detail}"
        logger.info("%s: %s", name, "pass" if passed else "FAIL")
        results.append(CheckResult(check=name, passed=bool(passed), detail=detail))
    return results


def cmd_validate(config: Config, settings: Settings, meta: Dict[str, Any]) -> int:
    results = run_battery(config)
    print(format_checks(results))
    write_checks(results, Path(config.output.dir), meta)
    failed = [r.check for r in results if not r.passed]
    if failed:
        logger.error("validation failed: %s", ", ".join(failed))
        return 1
    return 0
