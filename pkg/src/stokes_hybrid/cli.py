"""Command-line entry point: ``stokes-hybrid run`` and ``stokes-hybrid mesh-info``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .mesh import MeshFormatError, load_gmsh
from .study import emit, load_config, run_study


def _parse_list(text, cast):
    return [cast(t) for t in text.split(",") if t.strip()]


def build_parser():
    parser = argparse.ArgumentParser(prog="stokes-hybrid",
                                     description="Hybridized DG Stokes solver studies.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a study described by a TOML file")
    run.add_argument("config", help="path to the study TOML file")
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument("--format", choices=["csv", "json"], help="table format")
    run.add_argument("--variants", type=lambda s: _parse_list(s, str),
                     help="comma-separated list, e.g. HDG,EDG")
    run.add_argument("--degrees", type=lambda s: _parse_list(s, int), help="e.g. 1,2")
    run.add_argument("--levels", type=int)
    run.add_argument("--nu", type=lambda s: _parse_list(s, float))
    run.add_argument("--alpha", type=float, help="penalty override")
    run.add_argument("--solver", choices=["direct", "minres", "gmres"])
    run.add_argument("--tol", type=float)
    run.add_argument("--maxit", type=int)
    run.add_argument("--mesh", help="MSH file replacing the built-in generator")

    info = sub.add_parser("mesh-info", help="summarize a Gmsh 2.2 ASCII mesh")
    info.add_argument("msh")
    return parser


def _cmd_run(args):
    overrides = {k: getattr(args, k) for k in
                 ("out", "format", "variants", "degrees", "levels", "nu", "alpha", "solver",
                  "tol", "maxit", "mesh")}
    try:
        cfg = load_config(args.config, overrides)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    result = run_study(cfg)
    for r in result.rows:
        if not r.converged:
            print(f"row failed: {r.variant} k={r.k} level={r.level} nu={r.nu:g}: {r.reason}",
                  file=sys.stderr)
    path = emit(result)
    print(path)
    return 0 if result.all_converged else 1


def _cmd_mesh_info(args):
    try:
        mesh = load_gmsh(args.msh)
    except (OSError, MeshFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(mesh.info(), indent=1))
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_mesh_info(args)


if __name__ == "__main__":
    sys.exit(main())
