"""
Throughput of the runner over worker counts.

    python benchmark.py --config configs/ising.toml --threads 1 2 4 8

Reports traces per second for each thread count. This is a timing aid, not a
correctness gate; the bound rows themselves are identical for every count.
"""
import argparse
import logging
import time
from pathlib import Path

from main import load_config
from runner import ExperimentRunner
from schemas import ExperimentPlan
from settings import configure_logging, get_settings

logger = logging.getLogger("benchmark")


def main() -> None:
    parser = argparse.ArgumentParser(description="runner throughput over worker counts")
    parser.add_argument("--config", required=True)
    parser.add_argument("--threads", type=int, nargs="+", default=[1, 2, 4])
    parser.add_argument("--backend", choices=["threading", "loky"], default=None)
    args = parser.parse_args()

    settings = get_settings(backend=args.backend)
    configure_logging(settings, "WARNING")
    config, _ = load_config(Path(args.config))
    plan = ExperimentPlan.from_config(config, run_bounds=True, with_estimators=False)

    baseline = None
    print(f"{'threads':>7}  {'seconds':>8}  {'traces/s':>9}  speedup")
    for threads in args.threads:
        started = time.perf_counter()
        summary = ExperimentRunner(plan, threads=threads, backend=settings.backend).execute()
        elapsed = time.perf_counter() - started
        rows = summary.bounds.rows
        if baseline is None:
            baseline = (elapsed, rows)
        elif rows != baseline[1]:
            logger.warning("bound rows differ between thread counts")
        traces = summary.timing.traces or plan.processes * plan.replicates * len(plan.lags)
        print(f"{threads:>7}  {elapsed:>8.2f}  {traces / elapsed:>9.1f}  {baseline[0] / elapsed:.2f}x")


if __name__ == "__main__":
    main()
