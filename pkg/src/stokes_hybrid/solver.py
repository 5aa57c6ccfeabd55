"""End-to-end pipeline: assemble, condense, solve, recover, normalize pressure."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import assemble_global, penalty_parameter, reference_tables
from .condense import back_substitute, condense
from .krylov import BlockSGSPreconditioner, SparseFactor, SolveReport, gmres_restarted, minres
from .spaces import MethodVariant, build_dofmap

__all__ = ["DiscreteSolution", "solve_condensed", "solve_stokes", "pressure_mean", "SOLVERS"]

SOLVERS = ("direct", "minres", "gmres")


@dataclass
class DiscreteSolution:
    dofmap: object
    u: np.ndarray
    ubar: np.ndarray
    p: np.ndarray
    pbar: np.ndarray
    report: SolveReport
    times: dict = field(default_factory=dict)
    condensed: object = None

    @property
    def U(self):
        dm = self.dofmap
        return np.concatenate([self.ubar[~dm.constrained], self.p, self.pbar])


def _pin(S, pin):
    """Copy of S with row and column ``pin`` replaced by the identity."""
    A = sp.csr_matrix(S, copy=True)
    A.data[A.indptr[pin]:A.indptr[pin + 1]] = 0.0
    A.data[A.indices == pin] = 0.0
    A.eliminate_zeros()
    return (A + sp.csr_matrix(([1.0], ([pin], [pin])), shape=A.shape)).tocsr()


def _direct(S, rhs, dm, tol=1e-12, refine=3):
    """Sparse LU of S with the last facet-pressure dof pinned to zero.

    A few steps of iterative refinement against the unpinned operator
    bring the true residual down to rounding level.
    """
    t0 = time.perf_counter()
    n = S.shape[0]
    report = SolveReport("direct")
    b = np.array(rhs, dtype=float)
    A = S
    if dm.n_pbar > 0:
        A = _pin(S, n - 1)
        b[n - 1] = 0.0
    lu = SparseFactor(A, dm.condensed_groups(), check_tol=None)
    x = lu.solve(b)
    bn = np.linalg.norm(rhs)
    if bn == 0:
        x[:] = 0.0
    res = [1.0 if bn > 0 else 0.0]
    r = rhs - S @ x
    res.append(np.linalg.norm(r) / bn if bn > 0 else 0.0)
    for _ in range(refine):
        if res[-1] <= 1e-15:
            break
        if dm.n_pbar > 0:
            r[n - 1] = 0.0
        x_new = x + lu.solve(r)
        r_new = rhs - S @ x_new
        rn = np.linalg.norm(r_new) / bn
        if not rn < res[-1]:
            break
        x, r = x_new, r_new
        res.append(rn)
    del lu, A
    report.iterations = len(res) - 1
    report.residuals = res
    report.converged = bool(res[-1] <= tol)
    report.time = time.perf_counter() - t0
    return x, report


def solve_condensed(cs, solver="minres", tol=1e-12, maxit=2000, restart=30):
    """Solve ``S U = r`` with the requested method; returns ``(U, report, setup_time)``."""
    dm = cs.dofmap
    solver = solver.lower()
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}; choose from {SOLVERS}")
    if solver == "direct":
        U, rep = _direct(cs.S, cs.rhs, dm, tol)
        return U, rep, 0.0
    z = dm.pressure_nullspace()
    t0 = time.perf_counter()
    P = BlockSGSPreconditioner(cs.S, dm.block_sizes, groups=dm.condensed_groups()).factorize()
    setup = time.perf_counter() - t0
    if solver == "minres":
        U, rep = minres(cs.S, cs.rhs, P, tol=tol, maxit=maxit, nullspace=z)
    else:
        U, rep = gmres_restarted(cs.S, cs.rhs, P, restart=restart, tol=tol, maxit=maxit,
                                 nullspace=z)
    return U, rep, setup


def pressure_mean(mesh, dofmap, p):
    """Area-weighted mean of the cell pressure field."""
    tab = reference_tables(dofmap.k)
    geom = mesh.geometry()
    moments = tab.pre.values(tab.vol.points).T @ tab.vol.weights       # (nkm,)
    cellint = np.abs(geom.det) * (p[dofmap.cell_p] @ moments)
    return float(cellint.sum() / mesh.area())


def solve_stokes(mesh, k, variant, nu=1.0, f=None, g=None, alpha=None, solver="minres",
                 tol=1e-12, maxit=2000, restart=30, keep_condensed=False):
    """Discretize and solve the Stokes problem with Dirichlet data ``g``.

    ``f`` and ``g`` map points (n, 2) to vectors (n, 2).  The pressure pair
    ``(p, pbar)`` is shifted by one constant so that the cell pressure has
    zero mean.
    """
    variant = MethodVariant.parse(variant)
    if alpha is None:
        alpha = penalty_parameter(k, variant)
    times = {}
    t0 = time.perf_counter()
    dm = build_dofmap(mesh, k, variant)
    system = assemble_global(mesh, dm, nu, alpha, f=f, g_boundary=g)
    times["assemble"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    cs = condense(system)
    times["condense"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    U, report, setup = solve_condensed(cs, solver, tol=tol, maxit=maxit, restart=restart)
    times["solve"] = time.perf_counter() - t0
    times["precond_setup"] = setup

    t0 = time.perf_counter()
    ub_free, p, pbar = dm.split_condensed(U)
    shift = pressure_mean(mesh, dm, p)
    p = p - shift
    pbar = pbar - shift
    U = np.concatenate([ub_free, p, pbar])
    u = back_substitute(cs, U)
    ubar = system.g.copy()
    ubar[~dm.constrained] = ub_free
    times["recover"] = time.perf_counter() - t0
    times["total"] = sum(times[key] for key in ("assemble", "condense", "solve", "recover"))
    return DiscreteSolution(dofmap=dm, u=u, ubar=ubar, p=p, pbar=pbar, report=report,
                            times=times, condensed=cs if keep_condensed else None)
