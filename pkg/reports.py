"""
CSV and JSON emitters. Every file opens with the config hash and master seed;
floats are written with 17 significant digits so reruns are byte-identical.
"""
import csv
import hashlib
import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Sequence

from pydantic import BaseModel

from schemas import BoundReport, CheckResult, GeometricRow, RunSummary

logger = logging.getLogger(__name__)

BOUND_COLUMNS = [
    "k", "L", "old_bound", "new_bound", "replicate_sd_old", "replicate_sd_new",
    "Q", "replicates", "vacuous_flag",
]
EXACT_COLUMNS = ["tv_exact", "old_exact", "new_exact"]
ESTIMATE_COLUMNS = ["estimator", "k", "r", "L", "h", "coordinate", "mean", "se", "variance", "n"]
RRV_COLUMNS = ["estimator", "baseline", "k", "r", "L", "h", "coordinate", "rrv", "lower", "upper"]
GEOMETRIC_COLUMNS = [
    "p", "k", "L", "old_bound", "new_bound", "new_bound_series", "m", "vacuous_flag",
]
CHECK_COLUMNS = ["check", "passed", "detail"]


def config_digest(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def run_meta(raw_config: bytes, seed: int) -> Dict[str, Any]:
    return {"config_sha256": config_digest(raw_config), "seed": seed}


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_rows(path: Path, rows: Sequence[BaseModel], columns: List[str], meta: Dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(f"# config_sha256={meta.get('config_sha256', '')} seed={meta.get('seed', '')}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            data = row.model_dump()
            writer.writerow([_cell(data[c]) for c in columns])
    logger.info("wrote %s (%d rows)", path, len(rows))
    return path


def write_bound_report(report: BoundReport, out_dir: Path, meta: Dict[str, Any]) -> Path:
    columns = list(BOUND_COLUMNS)
    for name in EXACT_COLUMNS:
        if any(getattr(row, name) is not None for row in report.rows):
            columns.append(name)
    return write_rows(out_dir / "bounds.csv", report.rows, columns, meta)


def write_estimates(summary: RunSummary, out_dir: Path, meta: Dict[str, Any]) -> List[Path]:
    paths = [write_rows(out_dir / "estimates.csv", summary.estimates, ESTIMATE_COLUMNS, meta)]
    if summary.rrv:
        paths.append(write_rows(out_dir / "rrv.csv", summary.rrv, RRV_COLUMNS, meta))
    return paths


def write_geometric(rows: Sequence[GeometricRow], out_dir: Path, meta: Dict[str, Any]) -> Path:
    return write_rows(out_dir / "geometric.csv", rows, GEOMETRIC_COLUMNS, meta)


def write_checks(rows: Sequence[CheckResult], out_dir: Path, meta: Dict[str, Any]) -> Path:
    return write_rows(out_dir / "validation.csv", rows, CHECK_COLUMNS, meta)


def format_checks(rows: Sequence[CheckResult]) -> str:
    width = max([len(r.check) for r in rows] + [5])
    lines = [f"{'check':<{width}}  result  detail"]
    for r in rows:
        lines.append(f"{r.check:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.detail}")
    return "\n".join(lines)


def write_summary_json(summary: RunSummary, out_dir: Path) -> Path:
    path = out_dir / "summary.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary.model_dump(mode="json"), indent=2) + "\n")
    logger.info("wrote %s", path)
    return path
