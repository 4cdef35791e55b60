"""Command-line interface.

Exit codes: 0 success, 1 validation error, 2 solver non-convergence, 3 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .errors import ConvergenceError, DomainError, ValidationError
from .report import FORMATS, render, run_solve, run_sweep
from .scenario import load_scenario

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="drtwelfare",
        description="Welfare-optimal prices and capacity for demand-responsive transport.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--scenario", required=True,
                        help="scenario file, or a bundled fixture name (aggregate-table1, network-table1)")
        sp.add_argument("--format", choices=FORMATS, default="table")
        sp.add_argument("--out", type=Path, help="write output here instead of stdout")

    s = sub.add_parser("solve", help="solve a scenario and print the base-vs-optimal report")
    common(s)
    s.add_argument("--oracle", action="store_true", help="also run the brute-force welfare oracle")

    c = sub.add_parser("calibrate", help="print the calibration consistency report")
    common(c)

    w = sub.add_parser("sweep", help="re-solve over a range of one scenario parameter")
    common(w)
    w.add_argument("--param", required=True, help="dotted path, e.g. costs.c5 or routes.AC.added_vehicle_km")
    w.add_argument("--from", dest="start", type=float, required=True)
    w.add_argument("--to", dest="stop", type=float, required=True)
    w.add_argument("--steps", type=int, required=True)
    return p


def _emit(data: bytes, out: Path | None):
    if out is None:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        out.write_bytes(data)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        scenario = load_scenario(args.scenario)
        if args.command == "calibrate":
            _emit(render(scenario.consistency(), args.format), args.out)
            return EXIT_OK
        if args.command == "solve":
            report = run_solve(scenario, oracle=args.oracle)
            _emit(render(report, args.format), args.out)
            return EXIT_OK if report.ok else EXIT_SOLVER
        result = run_sweep(scenario, args.param, args.start, args.stop, args.steps)
        _emit(render(result, args.format), args.out)
        return EXIT_OK
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConvergenceError, DomainError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
