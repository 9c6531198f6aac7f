"""
ExperimentRunner: Q coupled processes per replicate, leave-one-out medians,
per-process estimators and the empirical bounds, aggregated over replicates.

Every random draw comes from a Philox stream keyed on
(master_seed, purpose, lag, replicate, process), so results do not depend on
the worker count or on the order in which work units finish.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

from bounds import (
    empirical_bounds_arrays,
    geometric_new_bound,
    geometric_old_bound,
    new_bound_exact,
    old_bound_exact,
)
from coupling import extend_trace, j_values, run_lagged_coupling
from errors import CapExceeded, PlanInvalid, StateSpaceTooLarge, ZeroVariance
from estimators import (
    h_backward,
    h_cv_single,
    h_forward,
    h_timeavg,
    h_timeavg_cv,
    loo_medians,
    resolve_test_function,
)
from exact_oracle import discrete_chain, j_distribution_from_tau, meeting_time_pmf, tv_exact
from kernels import CoupledKernel, build_kernel
from models import CoupledTrace, EstimatorInput, GeometricSpec, LagConfig
from schemas import (
    BoundMethod,
    BoundReport,
    BoundRow,
    DiscreteKernelConfig,
    EstimateRow,
    EstimatorKind,
    EstimatorRequest,
    ExperimentPlan,
    GeometricKernelConfig,
    RRVRow,
    RunSummary,
    Timing,
    VacuousFlag,
)

logger = logging.getLogger(__name__)

# stream purposes
TRACE_STREAM = 0
XI_STREAM = 1
EXTEND_STREAM = 2
BOOTSTRAP_STREAM = 3
VALIDATE_STREAM = 4


def seed_stream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent counter-based generator for one (purpose, lag, replicate, process) key."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=key)))


def simulate_trace(
    kernel: CoupledKernel,
    config: LagConfig,
    master_seed: int,
    replicate: int,
    process: int,
) -> CoupledTrace:
    rng = seed_stream(master_seed, TRACE_STREAM, config.lag, replicate, process)
    try:
        return run_lagged_coupling(
            kernel, config, rng, seed=(master_seed, config.lag, replicate, process)
        )
    except CapExceeded as exc:
        raise exc.with_provenance(config.lag, replicate, process) from None


def inject_geometric_tau(p: float, lag: int, master_seed: int, replicate: int, process: int) -> int:
    """tau = L - 1 + Geometric(p), the meeting time without any chains."""
    rng = seed_stream(master_seed, TRACE_STREAM, lag, replicate, process)
    return int(rng.geometric(p)) + lag - 1


def rrv(plain: np.ndarray, cv: np.ndarray) -> np.ndarray:
    """Var(cv) / Var(plain) per coordinate over paired per-process values."""
    var_plain = np.var(np.atleast_2d(plain.T).T, axis=0, ddof=1)
    var_cv = np.var(np.atleast_2d(cv.T).T, axis=0, ddof=1)
    if np.any(var_plain == 0.0):
        raise ZeroVariance("plain estimator has zero variance; RRV is undefined")
    return var_cv / var_plain


def paired_bootstrap_rrv(
    plain: np.ndarray,
    cv: np.ndarray,
    n_boot: int,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """RRV with a 95% percentile interval from resampling the (plain, cv) pairs."""
    ratio = rrv(plain, cv)
    n = plain.shape[0]
    draws = np.empty((n_boot, ratio.size))
    for b in range(n_boot):
        idx = rng.integers(0, n, size=n)
        var_plain = np.var(plain[idx], axis=0, ddof=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            draws[b] = np.var(cv[idx], axis=0, ddof=1) / var_plain
    draws[~np.isfinite(draws)] = np.nan
    lower, upper = np.nanpercentile(draws, [2.5, 97.5], axis=0)
    return ratio, lower, upper


@dataclass
class _EstimatorAccumulator:
    """Per-process estimator values, stacked over replicates."""

    values: Dict[Tuple[int, str, bool], List[np.ndarray]] = field(default_factory=dict)

    def add(self, request_index: int, h_name: str, plain: bool, value: np.ndarray) -> None:
        self.values.setdefault((request_index, h_name, plain), []).append(value)

    def stacked(self, request_index: int, h_name: str, plain: bool) -> np.ndarray:
        return np.vstack(self.values[(request_index, h_name, plain)])


class ExperimentRunner:
    def __init__(self, plan: ExperimentPlan, threads: int = 1, backend: str = "threading"):
        self.plan = plan
        self.threads = threads
        self.backend = backend
        self.geometric = isinstance(plan.kernel, GeometricKernelConfig)
        if self.geometric:
            self.kernel, self.initial = None, None
        else:
            self.kernel, self.initial = build_kernel(plan.kernel)
        self.test_functions = {name: resolve_test_function(name) for name in plan.h}
        # xi is drawn for every time index up to the largest k or r in the plan
        ends = [req.end for req in plan.estimators]
        self.t_max = max(plan.k_values + ends)

    # 1. Simulation

    def _traces(self, lag: int, replicate: int) -> List[CoupledTrace]:
        horizon = max([req.end for req in self.plan.estimators], default=0)
        config = LagConfig(lag, self.plan.max_sweeps, self.initial, horizon=horizon)
        return Parallel(n_jobs=self.threads, backend=self.backend)(
            delayed(simulate_trace)(self.kernel, config, self.plan.master_seed, replicate, q)
            for q in range(self.plan.processes)
        )

    def _taus(self, lag: int, replicate: int) -> np.ndarray:
        p = self.plan.kernel.p
        return np.array([
            inject_geometric_tau(p, lag, self.plan.master_seed, replicate, q)
            for q in range(self.plan.processes)
        ])

    def _xi(self, lag: int, replicate: int) -> np.ndarray:
        """xi[q, t] for every process q and time index t = 0 .. t_max."""
        return np.vstack([
            seed_stream(self.plan.master_seed, XI_STREAM, lag, replicate, q).integers(
                0, 2, size=self.t_max + 1
            )
            for q in range(self.plan.processes)
        ])

    # 2. Per-replicate computations

    def _replicate_bounds(self, taus: np.ndarray, xi: np.ndarray, lag: int) -> np.ndarray:
        out = np.empty((len(self.plan.k_values), 2))
        for i, k in enumerate(self.plan.k_values):
            J = j_values(taus, k, lag)
            medians = loo_medians(J - xi[:, k])
            out[i] = empirical_bounds_arrays(J, medians)
        return out

    def _truncations(self, taus: np.ndarray, xi: np.ndarray, lag: int, req: EstimatorRequest) -> np.ndarray:
        """m_hats[q, i] for t = k + i in the request's window."""
        window = range(req.k, req.end + 1)
        columns = [loo_medians(j_values(taus, t, lag) - xi[:, t]) for t in window]
        return np.column_stack(columns)

    def _replicate_estimates(
        self,
        traces: List[CoupledTrace],
        xi: np.ndarray,
        lag: int,
        replicate: int,
        acc: _EstimatorAccumulator,
    ) -> None:
        taus = np.array([tr.tau for tr in traces])
        truncations = {
            i: self._truncations(taus, xi, lag, req)
            for i, req in enumerate(self.plan.estimators)
            if req.kind.uses_cv
        }

        for q, trace in enumerate(traces):
            needed = 0
            for i, m_hats in truncations.items():
                window = np.arange(self.plan.estimators[i].k, self.plan.estimators[i].end + 1)
                needed = max(needed, int(np.max(window + m_hats[q] * lag)) + 1)
            if needed > len(trace.y_path):
                rng = seed_stream(self.plan.master_seed, EXTEND_STREAM, lag, replicate, q)
                trace = extend_trace(trace, self.kernel, needed, rng)

            for i, req in enumerate(self.plan.estimators):
                inp = EstimatorInput(trace, req.k, req.r)
                for name, h in self.test_functions.items():
                    if req.kind == EstimatorKind.FORWARD:
                        acc.add(i, name, False, h_forward(inp, h))
                    elif req.kind == EstimatorKind.BACKWARD:
                        acc.add(i, name, False, h_backward(inp, h))
                    elif req.kind == EstimatorKind.TIMEAVG:
                        acc.add(i, name, False, h_timeavg(inp, h))
                    elif req.kind == EstimatorKind.CV:
                        acc.add(i, name, False, h_cv_single(inp, h, int(truncations[i][q, 0])))
                        acc.add(i, name, True, h_backward(inp, h))
                    else:
                        acc.add(i, name, False, h_timeavg_cv(inp, h, truncations[i][q]))
                        acc.add(i, name, True, h_timeavg(inp, h))

    # 3. Exact columns

    def _exact_rows(self, lag: int) -> Dict[int, Dict[str, float]]:
        kernel = self.plan.kernel
        rows: Dict[int, Dict[str, float]] = {}
        if isinstance(kernel, GeometricKernelConfig):
            for k in self.plan.k_values:
                spec = GeometricSpec(kernel.p, k, lag)
                rows[k] = {"old_exact": geometric_old_bound(spec), "new_exact": geometric_new_bound(spec)}
        elif isinstance(kernel, DiscreteKernelConfig):
            try:
                chain = discrete_chain(kernel.matrix, kernel.initial)
            except StateSpaceTooLarge as exc:
                logger.warning("skipping exact columns: %s", exc.detail)
                return rows
            tau_pmf = meeting_time_pmf(chain, lag)
            for k in self.plan.k_values:
                jd = j_distribution_from_tau(tau_pmf, k, lag)
                rows[k] = {
                    "old_exact": old_bound_exact(jd),
                    "new_exact": new_bound_exact(jd),
                    "tv_exact": tv_exact(chain, k),
                }
        return rows

    # 4. Driver

    def execute(self, meta: Optional[Dict[str, object]] = None) -> RunSummary:
        plan = self.plan
        started = time.perf_counter()
        logger.info(
            "running %s plan: lags=%s, %d k values, Q=%d, replicates=%d, threads=%d",
            plan.kernel.family, plan.lags, len(plan.k_values), plan.processes,
            plan.replicates, self.threads,
        )
        empirical = plan.run_bounds and plan.bound_method == BoundMethod.EMPIRICAL
        if plan.run_bounds and plan.bound_method == BoundMethod.EXACT and not isinstance(
            plan.kernel, (GeometricKernelConfig, DiscreteKernelConfig)
        ):
            raise PlanInvalid("exact bounds are available for geometric and discrete kernels only")

        bound_rows: List[BoundRow] = []
        estimate_rows: List[EstimateRow] = []
        rrv_rows: List[RRVRow] = []
        joint_steps: List[int] = []

        for lag in plan.lags:
            per_replicate = np.empty((plan.replicates, len(plan.k_values), 2))
            acc = _EstimatorAccumulator()
            needs_traces = bool(plan.estimators) or empirical
            for rep in range(plan.replicates):
                if not needs_traces:
                    break
                if self.geometric:
                    traces, taus = [], self._taus(lag, rep)
                else:
                    traces = self._traces(lag, rep)
                    taus = np.array([tr.tau for tr in traces])
                    joint_steps.extend(tr.joint_steps for tr in traces)
                xi = self._xi(lag, rep)
                if empirical:
                    per_replicate[rep] = self._replicate_bounds(taus, xi, lag)
                if plan.estimators:
                    self._replicate_estimates(traces, xi, lag, rep, acc)
                logger.debug("lag %d replicate %d: mean tau %.2f", lag, rep, float(np.mean(taus)))

            if plan.run_bounds:
                bound_rows.extend(self._bound_rows(lag, per_replicate, empirical))
            if plan.estimators:
                estimate_rows.extend(self._estimate_rows(lag, acc))
                rrv_rows.extend(self._rrv_rows(lag, acc))
            logger.info("lag %d done", lag)

        elapsed = time.perf_counter() - started
        timing = Timing(
            wall_clock_seconds=elapsed,
            total_joint_steps=int(sum(joint_steps)),
            mean_joint_steps=float(np.mean(joint_steps)) if joint_steps else 0.0,
            traces=len(joint_steps),
            joint_steps=[int(s) for s in joint_steps],
        )
        logger.info("plan finished in %.2fs", elapsed)
        return RunSummary(
            meta=dict(meta or {}),
            bounds=BoundReport(rows=bound_rows),
            estimates=estimate_rows,
            rrv=rrv_rows,
            timing=timing,
        )

    # 5. Aggregation, in fixed index order

    def _bound_rows(self, lag: int, per_replicate: np.ndarray, empirical: bool) -> List[BoundRow]:
        plan = self.plan
        exact = self._exact_rows(lag)
        rows = []
        for i, k in enumerate(plan.k_values):
            extra = exact.get(k, {})
            if empirical:
                old, new = per_replicate[:, i, 0], per_replicate[:, i, 1]
                old_mean, new_mean = float(old.mean()), float(new.mean())
                ddof = 1 if plan.replicates > 1 else 0
                sd_old, sd_new = float(old.std(ddof=ddof)), float(new.std(ddof=ddof))
            elif extra:
                old_mean, new_mean = extra["old_exact"], extra["new_exact"]
                sd_old = sd_new = 0.0
            else:
                raise PlanInvalid(f"no exact bound available for k={k}, L={lag}")
            flag = VacuousFlag.of(old_mean, new_mean)
            if flag != VacuousFlag.NONE:
                logger.warning("vacuous bound at k=%d, L=%d (%s)", k, lag, flag.value)
            rows.append(BoundRow(
                k=k, L=lag,
                old_bound=old_mean, new_bound=new_mean,
                replicate_sd_old=sd_old, replicate_sd_new=sd_new,
                Q=plan.processes, replicates=plan.replicates,
                vacuous_flag=flag,
                **extra,
            ))
        return rows

    def _estimate_rows(self, lag: int, acc: _EstimatorAccumulator) -> List[EstimateRow]:
        rows = []
        for i, req in enumerate(self.plan.estimators):
            for name in self.plan.h:
                values = acc.stacked(i, name, False)
                n = values.shape[0]
                mean = values.mean(axis=0)
                variance = values.var(axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
                se = np.sqrt(variance / n)
                for c in range(values.shape[1]):
                    rows.append(EstimateRow(
                        estimator=req.kind, k=req.k, r=req.end, L=lag, h=name, coordinate=c,
                        mean=float(mean[c]), se=float(se[c]), variance=float(variance[c]), n=n,
                    ))
        return rows

    def _rrv_rows(self, lag: int, acc: _EstimatorAccumulator) -> List[RRVRow]:
        rows = []
        for i, req in enumerate(self.plan.estimators):
            if not req.kind.uses_cv:
                continue
            for name in self.plan.h:
                cv, plain = acc.stacked(i, name, False), acc.stacked(i, name, True)
                rng = seed_stream(self.plan.master_seed, BOOTSTRAP_STREAM, lag, i)
                try:
                    ratio, lower, upper = paired_bootstrap_rrv(plain, cv, self.plan.bootstrap, rng)
                except ZeroVariance:
                    logger.warning("skipping RRV for %s at k=%d, L=%d, h=%s: plain variance is 0",
                                   req.kind.value, req.k, lag, name)
                    continue
                for c in range(ratio.size):
                    rows.append(RRVRow(
                        estimator=req.kind, baseline=req.kind.plain, k=req.k, r=req.end, L=lag,
                        h=name, coordinate=c, rrv=float(ratio[c]),
                        lower=float(lower[c]), upper=float(upper[c]),
                    ))
        return rows
