import logging
from pathlib import Path
from typing import Any, Dict, List

from bounds import (
    geometric_median_index,
    geometric_new_bound,
    geometric_new_bound_series,
    geometric_old_bound,
)
from errors import ConfigError
from models import GeometricSpec
from reports import (
    write_bound_report,
    write_estimates,
    write_geometric,
    write_summary_json,
)
from runner import ExperimentRunner
from schemas import (
    Config,
    ExperimentPlan,
    GeometricKernelConfig,
    GeometricRow,
    OutputFormat,
    RunSummary,
    VacuousFlag,
)
from settings import Settings

logger = logging.getLogger(__name__)


def _run(plan: ExperimentPlan, settings: Settings, meta: Dict[str, Any]) -> RunSummary:
    runner = ExperimentRunner(plan, threads=settings.threads, backend=settings.backend)
    return runner.execute(meta)


def cmd_bounds(config: Config, settings: Settings, meta: Dict[str, Any]) -> int:
    plan = ExperimentPlan.from_config(config, run_bounds=True, with_estimators=False)
    summary = _run(plan, settings, meta)
    out_dir = Path(config.output.dir)
    if OutputFormat.CSV in config.output.formats:
        write_bound_report(summary.bounds, out_dir, meta)
    if OutputFormat.JSON in config.output.formats:
        write_summary_json(summary, out_dir)
    return 0


def cmd_estimate(config: Config, settings: Settings, meta: Dict[str, Any]) -> int:
    if not config.estimators:
        raise ConfigError("estimate needs at least one [[estimators]] entry in the config")
    plan = ExperimentPlan.from_config(config, run_bounds=False, with_estimators=True)
    summary = _run(plan, settings, meta)
    out_dir = Path(config.output.dir)
    if OutputFormat.CSV in config.output.formats:
        write_estimates(summary, out_dir, meta)
    if OutputFormat.JSON in config.output.formats:
        write_summary_json(summary, out_dir)
    return 0


def geometric_rows(p_values: List[float], k_values: List[int], lags: List[int]) -> List[GeometricRow]:
    rows = []
    for p in p_values:
        for lag in lags:
            for k in k_values:
                spec = GeometricSpec(p, k, lag)
                old, new = geometric_old_bound(spec), geometric_new_bound(spec)
                rows.append(GeometricRow(
                    p=p, k=k, L=lag,
                    old_bound=old,
                    new_bound=new,
                    new_bound_series=geometric_new_bound_series(spec),
                    m=geometric_median_index(spec),
                    vacuous_flag=VacuousFlag.of(old, new),
                ))
    return rows


def cmd_geometric(config: Config, settings: Settings, meta: Dict[str, Any]) -> int:
    if config.geometric is not None:
        p_values = config.geometric.p_values
    elif isinstance(config.kernel, GeometricKernelConfig):
        p_values = [config.kernel.p]
    else:
        raise ConfigError("geometric needs a [geometric] p_values list or a geometric kernel")

    rows = geometric_rows(p_values, config.k_grid.values(), config.lags)
    logger.info("closed-form table: %d rows over p=%s", len(rows), p_values)
    write_geometric(rows, Path(config.output.dir), meta)
    return 0
