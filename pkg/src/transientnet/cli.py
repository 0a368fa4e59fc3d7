"""Command line runner: execute scenario files, write run artifacts.

Exit codes: 0 on success, 1 on a scenario problem (parse, validation,
or runtime scenario error; message on standard error), 2 when an
internal invariant breaks.  No stack traces either way.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from typing import Optional, Sequence

from .errors import ScenarioError
from .scenario import load_scenario
from .simcore import run_scenario


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="transientnet",
        description="Deterministic transient-network simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario file")
    run.add_argument("scenario", help="path to a scenario file")
    run.add_argument("--out", default=".", metavar="DIR",
                     help="directory for run artifacts (default: .)")
    run.add_argument("--seed", type=int, default=None, metavar="N",
                     help="override the scenario seed")
    run.add_argument("--dump-topology", action="store_true",
                     help="also write topology.txt")
    run.add_argument("--no-trace", action="store_true",
                     help="skip writing trace.log")
    run.add_argument("--no-metrics", action="store_true",
                     help="skip writing metrics.csv")
    return parser


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(text)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scenario = load_scenario(args.scenario)
        if args.seed is not None:
            scenario = dataclasses.replace(scenario, seed=args.seed)
        report = run_scenario(scenario)
        os.makedirs(args.out, exist_ok=True)
        if not args.no_trace:
            _write(os.path.join(args.out, "trace.log"),
                   report.trace.render())
        if not args.no_metrics:
            _write(os.path.join(args.out, "metrics.csv"),
                   report.metrics.csv())
        if args.dump_topology:
            _write(os.path.join(args.out, "topology.txt"),
                   report.simulation.topo.dump())
    except ScenarioError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # pragma: no cover - defensive
        print(f"internal error: {type(err).__name__}: {err}",
              file=sys.stderr)
        return 2
    sys.stdout.write(report.metrics.csv())
    return 0


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
