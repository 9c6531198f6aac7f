"""
Command-line entry point.

    python main.py bounds   --config configs/geometric.toml [--seed N] [--out DIR] [--threads N]
    python main.py estimate --config configs/slow_oracle_rrv.toml
    python main.py validate --config configs/discrete_oracle.toml
    python main.py geometric --config configs/geometric.toml

Exit status: 0 on success, 1 for config or validation problems, 2 for
runtime failures such as chains that never meet.
"""
import argparse
import logging
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Callable, Dict, List, Optional

from pydantic import ValidationError

from commands.experiments import cmd_bounds, cmd_estimate, cmd_geometric
from commands.validation import cmd_validate
from errors import ConfigError, LagCouplingError
from reports import run_meta
from schemas import Config
from settings import Settings, configure_logging, get_settings

logger = logging.getLogger("main")

COMMANDS: Dict[str, Callable[[Config, Settings, dict], int]] = {
    "bounds": cmd_bounds,
    "estimate": cmd_estimate,
    "validate": cmd_validate,
    "geometric": cmd_geometric,
}


class _Parser(argparse.ArgumentParser):
    # usage errors are config errors (exit 1), not argparse's default 2
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, help="TOML experiment config")
    common.add_argument("--seed", type=int, help="override the config's master seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads for the runner")
    common.add_argument("--log-level", help="root log level (DEBUG, INFO, ...)")

    parser = _Parser(description="L-lag coupling experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("bounds", parents=[common], help="old/new TV bounds over a (k, L) grid")
    sub.add_parser("estimate", parents=[common], help="unbiased estimates and RRV tables")
    sub.add_parser("validate", parents=[common], help="run the invariant battery")
    sub.add_parser("geometric", parents=[common], help="closed-form bounds for geometric meeting times")
    return parser


def _describe(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        where = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{where}: {err['msg']}")
    return "; ".join(parts)


def load_config(path: Path, seed: Optional[int] = None, out: Optional[str] = None) -> tuple:
    """Parsed Config plus the raw bytes it came from (hashed into every output)."""
    try:
        raw = path.read_bytes()
        data = tomllib.loads(raw.decode("utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path} is not valid TOML: {exc}") from exc

    if seed is not None:
        data["seed"] = seed
    if out is not None:
        data.setdefault("output", {})["dir"] = out
    try:
        return Config.model_validate(data), raw
    except ValidationError as exc:
        raise ConfigError(f"invalid config {path}: {_describe(exc)}") from exc


def run(args: argparse.Namespace) -> int:
    settings = get_settings(threads=args.threads)
    configure_logging(settings, args.log_level)
    config, raw = load_config(Path(args.config), seed=args.seed, out=args.out)
    if "dir" not in config.output.model_fields_set:
        config.output.dir = settings.output_dir

    meta = run_meta(raw, config.seed)
    logger.info("%s: config %s (sha256 %s), seed %d",
                args.command, args.config, meta["config_sha256"][:12], config.seed)
    return COMMANDS[args.command](config, settings, meta)


def main(argv: Optional[List[str]] = None) -> int:
    try:
        return run(build_parser().parse_args(argv))
    except LagCouplingError as exc:
        logger.error("%s: %s", type(exc).__name__, exc.detail)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
