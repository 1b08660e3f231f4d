"""
Bench Command Line
==================

    bench run <config> [--seed N] [--duration S] [--out report.json] [--csv dir]
    bench validate <config>
    bench list

Exit codes: 0 success, 2 configuration error, 3 runtime fault or failed
conservation audit.
"""

import argparse
import logging
import sys
from typing import List, Optional

from app.config import get_runtime_settings
from .config import load_config
from .exceptions import BenchError, ConfigError, RuntimeFault
from .scenarios import list_scenarios, run_scenario

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = ConfigError.exit_code
EXIT_RUNTIME = RuntimeFault.exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description="Featherweight-process dataplane benchmarks")
    parser.add_argument("--log-level", default=None, help="Logging level (default: FWP_LOG_LEVEL or INFO)")

    subparsers = parser.add_subparsers(dest="command", required=True)

    # Run command
    run_parser = subparsers.add_parser("run", help="Run a scenario file")
    run_parser.add_argument("config", help="Scenario TOML file")
    run_parser.add_argument("--seed", type=int, default=None, help="Override scenario.seed")
    run_parser.add_argument("--duration", type=float, default=None, help="Override scenario.duration_s (seconds)")
    run_parser.add_argument("--out", default=None, help="Write the JSON report here (default: output.report)")
    run_parser.add_argument("--csv", default=None, help="Directory for per-sample latency CSV files")

    # Validate command
    val_parser = subparsers.add_parser("validate", help="Check a scenario file without running it")
    val_parser.add_argument("config", help="Scenario TOML file")

    subparsers.add_parser("list", help="List scenario kinds")
    return parser


def _configure_logging(level: Optional[str]) -> None:
    level = (level or get_runtime_settings().log_level).upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)-7s %(name)s: %(message)s",
    )


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config, seed=args.seed, duration=args.duration)
    report = run_scenario(config)
    report.print_summary()

    out = args.out or config.output.report
    if out:
        report.export_json(out)
    csv_dir = args.csv or config.output.csv
    if csv_dir:
        report.export_csv(csv_dir)

    if not report.audit.get("ok", False):
        print(f"conservation audit failed: {report.audit}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    print(
        f"OK: {config.scenario.name} ({config.scenario.kind.value}), "
        f"{len(config.templates)} templates, {len(config.rules)} rules"
    )
    return EXIT_OK


def cmd_list(args: argparse.Namespace) -> int:
    for kind, description in list_scenarios():
        print(f"  {kind:<10} {description}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "validate": cmd_validate, "list": cmd_list}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except BenchError as exc:
        print(f"error: {exc.detail}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
