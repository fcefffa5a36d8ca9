"""
The main module for the mixing simulator.

This module serves as the entry point. ``run <config>`` executes an experiment described by
a flat key-value config file, with ``--seed``, ``--out``, ``--mode`` and ``--trials``
overriding the file; ``summarize <paths...>`` aggregates existing result files into a
summary document.
"""

import argparse
import dataclasses
import logging
import os
import sys
from typing import Optional, Sequence

from src.constants import MODES, SUMMARY_FILE
from src.exceptions import ConfigParseError, DomainError, MixingError
from src.simulation import Simulation
from src.summarization import summarize, write_summary
from src.utils import positive_int, read_experiment_config, unsigned_64

logger = logging.getLogger(__name__)


def parse_args(argv: Optional[Sequence[str]] = None):
    """Parse command-line arguments."""
    parser = argparse.ArgumentParser(
        description="Simulate the sequential quantum mixing protocol on slowly evolving Markov chains."
    )
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging verbosity.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run the experiment described by a config file.")
    run.add_argument("config", help="Path of the key = value experiment config.")
    run.add_argument("--seed", type=unsigned_64, help="Seed overriding the config.")
    run.add_argument("--out", help="Output directory overriding the config.")
    run.add_argument("--mode", choices=MODES, help="Experiment mode overriding the config.")
    run.add_argument("--trials", type=positive_int, help="Number of trials overriding the config.")

    summary = commands.add_parser("summarize", help="Summarize result directories or record files.")
    summary.add_argument("paths", nargs="+", help="Result directories or records files.")
    summary.add_argument(
        "--out", help=f"Where to write the summary (default: {SUMMARY_FILE} next to the first input)."
    )
    return parser.parse_args(argv)


def run_experiment(args) -> int:
    config = read_experiment_config(args.config)
    overrides = {
        key: value
        for key, value in (("seed", args.seed), ("out", args.out), ("mode", args.mode), ("trials", args.trials))
        if value is not None
    }
    try:
        config = dataclasses.replace(config, **overrides)
    except DomainError as error:
        raise ConfigParseError(str(error)) from error

    simulation = Simulation(config)
    simulation.run()
    if os.path.exists(simulation.records_path):
        simulation.print_records_written(simulation.records_path)
    print(f"Summary of results exported to {simulation.summary_path}")
    return 0


def summarize_results(args) -> int:
    summary = summarize(args.paths)
    first = args.paths[0]
    directory = first if os.path.isdir(first) else os.path.dirname(first)
    filename = args.out or os.path.join(directory, SUMMARY_FILE)
    write_summary(summary, filename)
    print(f"Summary of results exported to {filename}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if args.command == "run":
            return run_experiment(args)
        return summarize_results(args)
    except (MixingError, OSError) as error:
        print(f"error: {error}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
