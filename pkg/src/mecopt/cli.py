"""Command-line entry point.

``mecopt run`` executes a configured Monte-Carlo experiment and writes CSV;
``mecopt report`` renders figures from previously written CSV files.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .errors import ConfigError, NumericalFailureError
from .harness import ALGORITHMS, load_config, run
from .report import render_report

__all__ = ["main"]


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mecopt",
        description="Energy-minimal partial offloading over an uplink "
                    "MIMO-NOMA channel: experiment runner and report tool.")
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run a configured experiment")
    runp.add_argument("--config", required=True, help="JSON config path")
    runp.add_argument("--trials", type=int, help="override run.trials")
    runp.add_argument("--seed", type=int, help="override channel.seed")
    runp.add_argument("--out", help="override output.csv path")
    runp.add_argument("--trace", help="override output.trace path")
    runp.add_argument("--algorithms",
                      help="comma-separated subset of " + ",".join(ALGORITHMS))
    runp.add_argument("--figures", action="store_true",
                      help="render figures next to the CSV after the run")

    repp = sub.add_parser("report", help="render figures from result CSVs")
    repp.add_argument("--csv", required=True, help="results CSV path")
    repp.add_argument("--trace", help="trace CSV path (adds convergence plot)")
    repp.add_argument("--outdir", help="figure directory (default: CSV's)")
    return parser


def _apply_overrides(config, args):
    updates = {}
    if args.trials is not None:
        updates["trials"] = args.trials
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out is not None:
        updates["csv_path"] = args.out
    if args.trace is not None:
        updates["trace_path"] = args.trace
    if args.algorithms is not None:
        names = tuple(s.strip() for s in args.algorithms.split(",") if s.strip())
        updates["algorithms"] = names
    if not updates:
        return config
    return dataclasses.replace(config, **updates)


def _cmd_run(args):
    config = _apply_overrides(load_config(args.config), args)
    records = run(config)
    runs = {(r.trial, r.algorithm, r.deadline_s) for r in records}
    infeasible = {(r.trial, r.algorithm, r.deadline_s) for r in records
                  if r.status == "infeasible"}
    print(f"{len(records)} records from {len(runs)} solver runs "
          f"({len(infeasible)} infeasible)")
    if config.csv_path:
        print(f"results: {config.csv_path}")
    if config.trace_path:
        print(f"traces:  {config.trace_path}")
    if args.figures:
        if not config.csv_path:
            raise ConfigError("output.csv", "--figures needs a CSV path")
        for path in render_report(config.csv_path, config.trace_path):
            print(f"figure:  {path}")
    return 0


def _cmd_report(args):
    for path in render_report(args.csv, args.trace, args.outdir):
        print(f"figure:  {path}")
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_report(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
