"""Convergence and solver studies driven by a flat TOML configuration.

A study sweeps variants, degrees and viscosities over a ladder of
uniformly refined meshes and collects one row per solve.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import mesh as meshmod
from . import solutions
from .solver import SOLVERS, solve_stokes
from .spaces import MethodVariant

__all__ = ["StudyConfig", "StudyRow", "StudyResult", "CASES", "COLUMNS", "load_config",
           "build_base_mesh", "run_study", "emit", "read_csv", "WORKERS_ENV"]

log = logging.getLogger(__name__)

WORKERS_ENV = "STOKES_HYBRID_WORKERS"

COLUMNS = ["case", "variant", "k", "level", "cells", "dofs_condensed", "nu", "err_u", "rate_u",
           "err_p", "rate_p", "div_norm", "jump_norm", "iters", "time_s", "converged"]

CASES = {
    "kovasznay": dict(factory=solutions.kovasznay, nu=[1.0 / 40.0], box=(-0.5, -0.5, 1.0, 1.5),
                      nx=16, ny=21),
    "curl": dict(factory=solutions.curl_case, nu=[1.0, 1e-6], box=(0.0, 0.0, 1.0, 1.0),
                 nx=64, ny=64),
    "smooth": dict(factory=solutions.smooth_case, nu=[1.0], box=(0.0, 0.0, 1.0, 1.0),
                   nx=8, ny=8),
    "lshape": dict(factory=lambda nu=1.0: solutions.l_shape_corner(), nu=[1.0], n=4),
    "cavity": dict(factory=solutions.cavity_case, nu=[1.0], box=(-1.0, -1.0, 1.0, 1.0),
                   nx=8, ny=8),
}


@dataclass
class StudyConfig:
    case: str
    variants: list = field(default_factory=lambda: ["HDG", "EDG_HDG", "EDG"])
    degrees: list = field(default_factory=lambda: [1])
    levels: int = 3
    nu: Optional[list] = None
    alpha: Optional[float] = None
    solver: str = "minres"
    tol: float = 1e-12
    maxit: int = 2000
    restart: int = 30
    mesh: str = "generator"
    nx: Optional[int] = None
    ny: Optional[int] = None
    n: Optional[int] = None
    pattern: str = "right"
    out: str = "results"
    format: str = "csv"
    name: Optional[str] = None

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"unknown case {self.case!r}; choose from {sorted(CASES)}")
        if isinstance(self.variants, str):
            self.variants = [self.variants]
        if isinstance(self.degrees, int):
            self.degrees = [self.degrees]
        self.variants = [str(MethodVariant.parse(v)) for v in self.variants]
        if not self.variants:
            raise ValueError("at least one variant is required")
        if any(int(k) != k or k < 1 for k in self.degrees):
            raise ValueError("degrees must be integers >= 1")
        self.degrees = [int(k) for k in self.degrees]
        if int(self.levels) < 1:
            raise ValueError("at least one level is required")
        self.levels = int(self.levels)
        if self.nu is None:
            self.nu = list(CASES[self.case]["nu"])
        elif not isinstance(self.nu, (list, tuple)):
            self.nu = [self.nu]
        self.nu = [float(v) for v in self.nu]
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        self.solver = self.solver.lower()
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; choose from {SOLVERS}")
        if self.format not in ("csv", "json"):
            raise ValueError("format must be csv or json")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**data)


def load_config(path, overrides=None):
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    data.setdefault("name", Path(path).stem)
    return StudyConfig.from_dict(data)


@dataclass
class StudyRow:
    case: str
    variant: str
    k: int
    level: int
    cells: int
    dofs_condensed: int
    nu: float
    err_u: float = math.nan
    rate_u: float = math.nan
    err_p: float = math.nan
    rate_p: float = math.nan
    div_norm: float = math.nan
    jump_norm: float = math.nan
    iters: int = 0
    time_s: float = math.nan
    converged: bool = False
    reason: str = ""
    extra: dict = field(default_factory=dict)

    def record(self):
        return {c: getattr(self, c) for c in COLUMNS}


@dataclass
class StudyResult:
    config: StudyConfig
    rows: list = field(default_factory=list)

    @property
    def all_converged(self):
        return all(r.converged for r in self.rows)

    def select(self, **kw):
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in kw.items())]


def build_base_mesh(cfg):
    spec = CASES[cfg.case]
    if cfg.mesh != "generator":
        return meshmod.load_gmsh(cfg.mesh)
    if cfg.case == "lshape":
        return meshmod.generate_l_shape(cfg.n or spec["n"], cfg.pattern)
    x0, y0, x1, y1 = spec["box"]
    return meshmod.generate_rectangle(x0, y0, x1, y1, cfg.nx or spec["nx"],
                                      cfg.ny or spec["ny"], cfg.pattern)


def _run_series(cfg, variant, k, nu):
    """All refinement levels of one (variant, k, nu) combination."""
    from .solutions import error_norms

    exact = CASES[cfg.case]["factory"](nu=nu)
    mesh = build_base_mesh(cfg)
    rows = []
    for level in range(cfg.levels):
        if level:
            mesh = meshmod.uniform_refine(mesh)
        row = StudyRow(cfg.case, variant, k, level, mesh.num_cells, 0, nu)
        try:
            sol = solve_stokes(mesh, k, variant, nu=nu, f=exact.f, g=exact.g, alpha=cfg.alpha,
                               solver=cfg.solver, tol=cfg.tol, maxit=cfg.maxit,
                               restart=cfg.restart)
            row.dofs_condensed = sol.dofmap.n_condensed
            row.iters = sol.report.iterations
            row.time_s = sol.times["total"]
            row.converged = bool(sol.report.converged)
            if not row.converged:
                row.reason = (f"{sol.report.method} stopped at residual "
                              f"{sol.report.final_residual:.3e} after {row.iters} iterations")
            t0 = time.perf_counter()
            rep = error_norms(mesh, sol.dofmap, sol, exact, alpha=cfg.alpha)
            row.err_u, row.err_p = float(rep.err_u), float(rep.err_p)
            row.div_norm, row.jump_norm = float(rep.div_norm), float(rep.jump_norm)
            row.extra = dict(times=sol.times, residual=sol.report.final_residual,
                             h_max=rep.h_max, u_h1=rep.u_h1, uh_h1=rep.uh_h1,
                             error_time=time.perf_counter() - t0)
            del sol
        except Exception as exc:  # a failed row must not abort the study
            log.warning("row %s k=%d level=%d failed: %s", variant, k, level, exc)
            row.converged = False
            row.reason = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    errs_u = [r.err_u for r in rows]
    errs_p = [r.err_p for r in rows]
    for i in range(1, len(rows)):
        rows[i].rate_u = _rate(errs_u[i - 1], errs_u[i])
        rows[i].rate_p = _rate(errs_p[i - 1], errs_p[i])
    return rows


def _rate(coarse, fine):
    if not (coarse > 0 and fine > 0):
        return math.nan
    return math.log2(coarse / fine)


def _workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_study(cfg, workers=None):
    """Run every (variant, k, nu) series; rows come back sorted by (variant, k, level)."""
    combos = [(v, k, nu) for v in cfg.variants for k in cfg.degrees for nu in cfg.nu]
    workers = workers or _workers()
    if workers > 1 and len(combos) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            series = list(pool.map(_run_series, *zip(*[(cfg, *c) for c in combos])))
    else:
        series = [_run_series(cfg, *c) for c in combos]
    rows = [r for s in series for r in s]
    order = {v: i for i, v in enumerate(cfg.variants)}
    rows.sort(key=lambda r: (order[r.variant], r.k, r.level, cfg.nu.index(r.nu)))
    return StudyResult(cfg, rows)


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(float(value))
    return str(value)


def emit(result, out_dir=None, fmt=None):
    """Write the study table as CSV or JSON; returns the file path."""
    cfg = result.config
    fmt = fmt or cfg.format
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = cfg.name or cfg.case
    if fmt == "csv":
        path = out / f"{stem}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(COLUMNS)
            for r in result.rows:
                writer.writerow([_fmt(v) for v in r.record().values()])
    elif fmt == "json":
        path = out / f"{stem}.json"
        recs = [{k: (None if isinstance(v, float) and math.isnan(v) else
                     float(v) if isinstance(v, float) else v)
                 for k, v in r.record().items()} for r in result.rows]
        path.write_text(json.dumps(recs, indent=1))
    else:
        raise ValueError("format must be csv or json")
    return path


def read_csv(path):
    """Parse an emitted CSV back into typed records."""
    ints = {"k", "level", "cells", "dofs_condensed", "iters"}
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {}
            for key, val in rec.items():
                if key in ("case", "variant"):
                    row[key] = val
                elif key == "converged":
                    row[key] = val == "true"
                elif key in ints:
                    row[key] = int(val)
                else:
                    row[key] = float(val) if val != "" else math.nan
            out.append(row)
    return out
