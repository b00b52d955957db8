"""Command-line driver: ``reentrant-dg {advection,transport} [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .study import ConfigError, StudyError, parse_config, run_convergence_study

# CLI flag -> StudyConfig field
FLAG_FIELDS = {
    "degree": "degree",
    "geometry_degree": "geometry_degree",
    "nx": "nx",
    "ny": "ny",
    "refinements": "refinements",
    "stab": "stabilization",
    "theta0": "theta0",
    "face_points": "face_points",
    "volume_points": "volume_points",
    "tol": "solver_tol",
    "preconditioner": "preconditioner",
    "jitter": "jitter",
    "seed": "seed",
    "q_faces": "q_faces",
    "n_polar": "n_polar",
    "n_azimuthal": "n_azimuthal",
    "si_tol": "si_tol",
    "out": "output",
    "summary": "summary",
    "precision": "precision",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reentrant-dg", description="DG convergence studies on swirled meshes.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="problem", required=True)
    for name in ("advection", "transport"):
        p = sub.add_parser(name, help=f"{name} convergence study")
        p.add_argument("--config", metavar="PATH", help="JSON file with StudyConfig fields")
        p.add_argument("--degree", type=int)
        p.add_argument("--geometry-degree", type=int)
        p.add_argument("--nx", type=int)
        p.add_argument("--ny", type=int)
        p.add_argument("--refinements", type=int, help="uniform refinement steps (table has one more row)")
        p.add_argument("--stab", choices=("upwind", "scaled", "mean"))
        p.add_argument("--theta0", type=float)
        p.add_argument("--face-points", type=int)
        p.add_argument("--volume-points", type=int)
        p.add_argument("--tol", type=float, help="GMRES relative tolerance")
        p.add_argument("--preconditioner", choices=("ilu", "block_jacobi", "none"))
        p.add_argument("--jitter", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--q-faces", choices=("all", "reentrant"))
        p.add_argument("--out", metavar="PATH", help="CSV output (stdout if omitted)")
        p.add_argument("--summary", metavar="PATH", help="JSON run summary")
        p.add_argument("--precision", type=int, help="significant digits in the CSV")
        if name == "transport":
            p.add_argument("--n-polar", type=int)
            p.add_argument("--n-azimuthal", type=int)
            p.add_argument("--si-tol", type=float)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = {FLAG_FIELDS[k]: v for k, v in vars(args).items() if k in FLAG_FIELDS}
    overrides["problem"] = args.problem
    try:
        cfg = parse_config(args.config, overrides)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        result = run_convergence_study(cfg)
    except StudyError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1
    if not cfg.output:
        sys.stdout.write(result.table.to_csv(cfg.precision))
    if args.verbose:
        print(json.dumps({"wall_time": result.wall_time}), file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
