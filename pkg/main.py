#!/usr/bin/env python3
"""
Adaptive Cognitive Fit Lab - Main Entry Point

Subcommands: synth | cluster | experiment | loop | report | pipeline
Exit codes: 0 success, 1 usage/config, 2 I/O, 3 parse, 4 calibration, 5 missing input.
"""

import argparse
import logging
import sys
from typing import List, Optional

from colorama import Fore, Style, init

from acflab.errors import AcfLabError
from config import LOG_FILE, LOG_FORMAT, LOG_LEVEL, VERBOSE_LOGGING, load_run_config
from graph import get_graph
from stages import COMMANDS
from state import StageResult, create_initial_state

# Initialize colorama for pretty terminal output
init(autoreset=True)

logger = logging.getLogger(__name__)


def configure_logging() -> None:
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if LOG_FILE:
        handlers.append(logging.FileHandler(LOG_FILE, encoding="utf-8"))
    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
    )


def print_section(title: str):
    """Print formatted section header."""
    print(f"\n{Fore.GREEN}{'=' * 70}")
    print(f"  {title}")
    print(f"{'=' * 70}{Style.RESET_ALL}\n")


def print_status(stage: str, status: str, color: str = Fore.CYAN):
    """Print stage status."""
    print(f"{color}[{stage:12}] {status}{Style.RESET_ALL}")


def print_result(result: StageResult) -> None:
    for key, value in result.summary.items():
        if key == "describe":
            for row in value:
                sd = "NA" if row["sd"] is None else f"{row['sd']:.3f}"
                print(f"  {row['axis']:3} {row['condition']:11} n={row['n']:<6} mean={row['mean']:9.3f} sd={sd}")
        else:
            print(f"  {key}: {value}")
    print_status(result.command, f"✓ wrote {', '.join(result.artifacts)}", Fore.GREEN)


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with code 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run document")
    common.add_argument("--seed", type=int, help="random seed (required for randomized commands)")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override a config entry, e.g. --set loop.T=8000 (repeatable)",
    )
    common.add_argument("--out", help="output directory")

    parser = _Parser(prog="acflab", description="Adaptive cognitive fit lab")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="generate the labeled dataset")
    sub.add_parser("cluster", parents=[common], help="BIC mixture selection and confusion metrics")
    sub.add_parser("experiment", parents=[common], help="simulate the trading experiment and run the ANOVA battery")
    sub.add_parser("loop", parents=[common], help="run the adaptive representation recommender")
    sub.add_parser("report", parents=[common], help="assemble report.md from prior outputs")
    sub.add_parser("pipeline", parents=[common], help="run every stage in one output directory")
    return parser


def run_pipeline(config) -> int:
    print_section("RUNNING PIPELINE")
    state = get_graph().invoke(create_initial_state(config))
    for line in state["execution_log"]:
        print_status("pipeline", line)
    for result in state["results"].values():
        print_result(result)
    if state["error_state"]:
        print_status("pipeline", f"✗ {state['error_state']}", Fore.RED)
    return state["exit_code"]


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    configure_logging()
    args = build_parser().parse_args(argv)

    try:
        config = load_run_config(
            args.config,
            args.overrides,
            seed=args.seed,
            output_dir=args.out,
            require_seed=args.command != "report",
        )
        if args.command == "pipeline":
            return run_pipeline(config)

        print_section(args.command.upper())
        result = COMMANDS[args.command](config)
        print_result(result)
        return 0
    except AcfLabError as e:
        print_status(args.command, f"✗ {e}", Fore.RED)
        residuals = getattr(e, "residuals", None)
        if residuals:
            for code, r in sorted(residuals.items()):
                print(f"  {code}: {r}")
        if VERBOSE_LOGGING:
            logger.exception("%s failed", args.command)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
