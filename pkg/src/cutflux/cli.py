"""Command-line entry point: ``cutflux run --example ellipse --mode amr ...``."""

from __future__ import annotations

import argparse
import logging
import sys

from .driver import CSV_COLUMNS, ExperimentSpec, HardAssertionError, run_experiment
from .flux import SingularCutSystemError
from .linalg import IncompatibleSystemError, SolverError
from .problems import EXAMPLES


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cutflux", description="CutFEM interface solver with flux-based error estimation")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment and write CSV/VTK output")
    r.add_argument("--example", choices=EXAMPLES, default="ellipse")
    r.add_argument("--mu", type=float, default=None, help="contrast k2/k1 (example default if omitted)")
    r.add_argument("--mode", choices=("uniform", "amr"), default="amr")
    r.add_argument("--theta-mark", type=float, default=0.35)
    r.add_argument("--max-dofs", type=int, default=30_000)
    r.add_argument("--max-iter", type=int, default=None)
    r.add_argument("--gamma", type=float, default=10.0)
    r.add_argument("--gamma-g", type=float, default=0.1)
    r.add_argument("--n0", type=int, default=None, help="subdivisions per axis of the initial mesh")
    r.add_argument("--out", default="cutflux_out")
    r.add_argument("--no-vtk", action="store_true")
    r.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        spec = ExperimentSpec(
            example=args.example, mu=args.mu, mode=args.mode, theta_mark=args.theta_mark,
            max_dofs=args.max_dofs, max_iter=args.max_iter, gamma=args.gamma, gamma_g=args.gamma_g,
            n0=args.n0, out=args.out, write_vtk=not args.no_vtk,
        )
        table = run_experiment(spec)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (HardAssertionError, IncompatibleSystemError, SolverError, SingularCutSystemError) as exc:
        print(f"hard failure: {exc}", file=sys.stderr)
        return 1
    print(",".join(CSV_COLUMNS))
    for rec in table.records:
        print(",".join(rec.csv_row()))
    if len(table.records) >= 2:
        print(f"# slopes (last 4): energy {table.slope('energy_error'):.3f}, eta {table.slope('eta'):.3f}",
              file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
