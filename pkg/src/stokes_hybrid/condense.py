"""Static condensation of the cell velocity.

Eliminating ``u = A_uu^{-1} (L_u - B^T U)`` cell by cell leaves a sparse
symmetric system ``S U = r`` for ``U = (ubar_free, p, pbar)`` with
``S = C - B A_uu^{-1} B^T``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .assembly import _chunks

__all__ = ["SingularCellError", "CondensedSystem", "condense", "back_substitute",
           "export_matrix_market"]


class SingularCellError(np.linalg.LinAlgError):
    """A cell block A_uu^K is not positive definite."""

    def __init__(self, cell, alpha, min_eig):
        super().__init__(
            f"A_uu block of cell {cell} is not positive definite "
            f"(smallest eigenvalue {min_eig:.3e}); penalty alpha={alpha} is likely "
            f"below the stability threshold")
        self.cell = cell
        self.alpha = alpha


def _cholesky(A, offset, alpha):
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        eig = np.linalg.eigvalsh(A)[:, 0]
        bad = int(np.argmin(eig))
        raise SingularCellError(offset + bad, alpha, float(eig[bad])) from None


def _tri_solve(L, b, trans=False):
    # batched triangular solve through LAPACK-backed generic solve
    if trans:
        return np.linalg.solve(L.transpose(0, 2, 1), b)
    return np.linalg.solve(L, b)


@dataclass(eq=False)
class CondensedSystem:
    S: sp.csr_matrix
    rhs: np.ndarray
    chol: np.ndarray            # per-cell Cholesky factors of A_uu^K
    system: object              # the BlockSystem that was condensed

    @property
    def dofmap(self):
        return self.system.dofmap

    @property
    def shape(self):
        return self.S.shape

    def blocks(self):
        """Sparse 3x3 block partition over (ubar, p, pbar)."""
        sizes = np.cumsum((0,) + self.dofmap.block_sizes)
        return [[self.S[sizes[i]:sizes[i + 1], sizes[j]:sizes[j + 1]] for j in range(3)]
                for i in range(3)]


def condense(system):
    """Eliminate the cell velocity from a :class:`BlockSystem`."""
    dm = system.dofmap
    n = dm.n_condensed
    index = dm.condensed_cell_index()
    nc = len(system.A_uu)
    chol = np.empty_like(system.A_uu)
    S = sp.csr_matrix((n, n))
    rhs = np.zeros(n)
    nloc = index.shape[1]
    na = system.A_bu.shape[1]
    for idx in _chunks(nc):
        L = _cholesky(system.A_uu[idx], idx[0], system.alpha)
        chol[idx] = L
        Bl = system.coupling(idx)                              # (m, nU, nu)
        W = _tri_solve(L, Bl.transpose(0, 2, 1))               # L^{-1} B^T
        y = _tri_solve(L, system.L_u[idx][:, :, None])[:, :, 0]
        SK = -np.einsum("cki,ckj->cij", W, W)
        SK[:, :na, :na] += system.A_bb[idx]
        rK = system.Lbar[idx] - np.einsum("cki,ck->ci", W, y)
        ix = index[idx]
        r = np.broadcast_to(ix[:, :, None], SK.shape).ravel()
        c = np.broadcast_to(ix[:, None, :], SK.shape).ravel()
        mask = (r >= 0) & (c >= 0)
        S = S + sp.csr_matrix((SK.ravel()[mask], (r[mask], c[mask])), shape=(n, n))
        keep = ix >= 0
        np.add.at(rhs, ix[keep], rK[keep])
    S.sum_duplicates()
    S.sort_indices()
    return CondensedSystem(S=S, rhs=rhs, chol=chol, system=system)


def back_substitute(cs, U):
    """Recover the cell velocity (length ``n_u``) from a condensed solution."""
    dm = cs.dofmap
    U = np.asarray(U, dtype=float)
    if U.shape != (dm.n_condensed,):
        raise ValueError(f"expected vector of length {dm.n_condensed}, got {U.shape}")
    index = dm.condensed_cell_index()
    out = np.empty((len(cs.chol), cs.chol.shape[1]))
    sysm = cs.system
    for idx in _chunks(len(cs.chol)):
        ix = index[idx]
        UK = np.where(ix >= 0, U[np.maximum(ix, 0)], 0.0)
        b = sysm.L_u[idx] - np.einsum("cij,ci->cj", sysm.coupling(idx), UK)
        L = cs.chol[idx]
        y = _tri_solve(L, b[:, :, None])
        out[idx] = _tri_solve(L, y, trans=True)[:, :, 0]
    return out.ravel()


def export_matrix_market(cs, path, rhs_path=None):
    """Write ``S`` (and optionally the right-hand side) in Matrix Market format."""
    path = Path(path)
    scipy.io.mmwrite(str(path), cs.S, symmetry="symmetric")
    if rhs_path is not None:
        scipy.io.mmwrite(str(rhs_path), cs.rhs[:, None])
    return path
