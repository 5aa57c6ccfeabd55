"""Dense reference solves, finite-difference checks and the inf-sup probe.

Everything here materializes dense matrices and is meant for small
verification problems only; sizes above :data:`DENSE_CAP` are refused.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

from .assembly import BlockSystem, assemble_norm_matrices, penalty_parameter, reference_tables
from .condense import CondensedSystem

__all__ = [
    "DENSE_CAP",
    "DENSE_RTOL",
    "OracleSizeError",
    "pressure_moments",
    "dense_matrix",
    "dense_solve",
    "relative_error",
    "fd_gradient",
    "fd_divergence",
    "infsup_probe",
    "coupling_matrix",
]

DENSE_CAP = 500
DENSE_RTOL = 1e-9


class OracleSizeError(ValueError):
    pass


def _check_size(n, cap):
    if n > cap:
        raise OracleSizeError(f"dense oracle refused: {n} unknowns exceeds the cap of {cap}")


def relative_error(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.linalg.norm(b), np.finfo(float).tiny)
    return float(np.linalg.norm(a - b) / scale)


def pressure_moments(dofmap):
    """Integrals of the cell-pressure basis functions, one per pressure dof."""
    mesh = dofmap.mesh
    tab = reference_tables(dofmap.k)
    ref = tab.pre.values(tab.vol.points).T @ tab.vol.weights
    out = np.zeros(dofmap.n_p)
    out[dofmap.cell_p] = np.abs(mesh.geometry().det)[:, None] * ref[None, :]
    return out


def dense_matrix(system):
    """Dense operator and right-hand side of a block or condensed system."""
    if isinstance(system, CondensedSystem):
        return system.S.toarray(), system.rhs.copy()
    if isinstance(system, BlockSystem):
        return system.full_matrix().toarray(), system.full_rhs()
    A = np.atleast_2d(np.asarray(system, dtype=float))
    return A, None


def _constraint_row(system, n):
    dm = system.dofmap
    c = np.zeros(n)
    mom = pressure_moments(dm)
    if isinstance(system, CondensedSystem):
        c[dm.n_ubar_free:dm.n_ubar_free + dm.n_p] = mom
    else:
        off = dm.n_u + dm.n_ubar
        c[off:off + dm.n_p] = mom
    return c


def dense_solve(system, rhs=None, cap=DENSE_CAP, border=None):
    """Direct dense solve of a small system.

    For a :class:`BlockSystem` or :class:`CondensedSystem` the singular
    constant-pressure mode is removed by bordering with the zero-mean
    cell-pressure constraint.  Plain arrays are solved as given unless
    ``border`` supplies a constraint row.
    """
    A, b0 = dense_matrix(system)
    n = A.shape[0]
    _check_size(n, cap)
    b = b0 if rhs is None else np.asarray(rhs, dtype=float)
    if b is None:
        raise ValueError("a right-hand side is required for a plain matrix")
    if border is None and isinstance(system, (BlockSystem, CondensedSystem)):
        border = _constraint_row(system, n)
    if border is None:
        return scipy.linalg.solve(A, b)
    K = np.zeros((n + 1, n + 1))
    K[:n, :n] = A
    K[:n, n] = border
    K[n, :n] = border
    x = scipy.linalg.solve(K, np.concatenate([b, [0.0]]), assume_a="sym")
    return x[:n]


def fd_gradient(fun, x, h=1e-6):
    """Central-difference Jacobian of a vector field, shape (n, m, 2)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    cols = []
    for d in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[d] = h
        fp = np.asarray(fun(x + e))
        fm = np.asarray(fun(x - e))
        cols.append((fp - fm) / (2.0 * h))
    return np.stack(cols, axis=-1)


def fd_divergence(fun, x, h=1e-6):
    J = fd_gradient(fun, x, h)
    return J[:, 0, 0] + J[:, 1, 1]


def coupling_matrix(system):
    """Sparse b_h matrix with rows (p, pbar) and columns u (full numbering)."""
    dm = system.dofmap
    B = system.B()
    return B[dm.n_ubar:]


def infsup_probe(mesh, dofmap, alpha=None, cap=DENSE_CAP, return_spectrum=False):
    """Discrete inf-sup constant of the pressure-velocity coupling.

    Computes ``min_q sup_v b_h(q, v) / (|||v|||_v |||q|||_p)`` over pressure
    pairs orthogonal to the constant mode, with the velocity ranging over
    cell and free facet velocities.  This is the square root of the
    second-smallest eigenvalue of ``B N_v^{-1} B^T x = mu N_p x``.
    """
    from .assembly import assemble_global

    if alpha is None:
        alpha = penalty_parameter(dofmap.k, dofmap.variant)
    nq = dofmap.n_p + dofmap.n_pbar
    _check_size(nq, cap)
    system = assemble_global(mesh, dofmap, 1.0, alpha)
    Bq = coupling_matrix(system).toarray()                    # (nq, n_u)
    Nv, _, Np = assemble_norm_matrices(mesh, dofmap, alpha)
    free = np.concatenate([np.arange(dofmap.n_u),
                           dofmap.n_u + np.flatnonzero(~dofmap.constrained)])
    Nv = Nv.toarray()[np.ix_(free, free)]
    Bfull = np.zeros((nq, len(free)))
    Bfull[:, :dofmap.n_u] = Bq
    X = scipy.linalg.cho_solve(scipy.linalg.cho_factor(Nv), Bfull.T)
    G = Bfull @ X
    G = 0.5 * (G + G.T)
    mu = scipy.linalg.eigh(G, Np.toarray(), eigvals_only=True)
    mu = np.sort(np.clip(mu, 0.0, None))
    beta = float(np.sqrt(mu[1])) if len(mu) > 1 else float("nan")
    if return_spectrum:
        return beta, mu
    return beta
