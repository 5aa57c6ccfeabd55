"""Block symmetric Gauss-Seidel preconditioning and Krylov drivers.

Both drivers check convergence on the true relative residual
``||b - S x|| / ||b||``, recomputed with a fresh matrix-vector product
after every iteration.  An optional orthonormal nullspace basis is
projected out of every preconditioned vector and of the final iterate.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pymetis
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SolveReport",
    "PreconditionerStateError",
    "IndefinitePreconditionerError",
    "SparseFactor",
    "nested_dissection",
    "BlockSGSPreconditioner",
    "apply_sgs",
    "as_csr",
    "project_nullspace",
    "minres",
    "gmres_restarted",
    "load_matrix_market",
]


class PreconditionerStateError(RuntimeError):
    pass


class IndefinitePreconditionerError(np.linalg.LinAlgError):
    pass


@dataclass
class SolveReport:
    method: str
    iterations: int = 0
    residuals: list = field(default_factory=list)
    time: float = 0.0
    converged: bool = False

    @property
    def final_residual(self):
        return self.residuals[-1] if self.residuals else np.nan


def as_csr(A, symmetric=False, tol=1e-12):
    """Canonical CSR copy (sorted, duplicate-free); optionally check symmetry."""
    A = sp.csr_matrix(A, dtype=float, copy=True)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got {A.shape}")
    A.sum_duplicates()
    A.sort_indices()
    if symmetric:
        scale = abs(A).max() if A.nnz else 0.0
        diff = abs(A - A.T).max() if A.nnz else 0.0
        if diff > tol * max(scale, 1.0):
            raise ValueError(f"matrix is not symmetric (max |A - A^T| = {diff:.3e})")
    return A


def _basis(nullspace, n):
    if nullspace is None:
        return None
    Z = np.asarray(nullspace, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.shape[0] != n:
        raise ValueError("nullspace basis has the wrong length")
    return Z


def project_nullspace(x, basis):
    """Remove the components of ``x`` along an orthonormal ``basis`` (n,) or (n, m)."""
    if basis is None:
        return np.array(x, dtype=float)
    Z = _basis(basis, len(x))
    x = np.array(x, dtype=float)
    # two passes keep the result orthogonal to rounding level
    for _ in range(2):
        x -= Z @ (Z.T @ x)
    return x


def nested_dissection(A, groups=None):
    """Fill-reducing symmetric permutation of ``A`` from METIS nested dissection.

    ``groups`` (length n, integer labels) lets unknowns with identical
    couplings, such as the components of one node, be ordered as a unit,
    which shrinks the graph handed to METIS.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    if n <= 2:
        return np.arange(n)
    if groups is None:
        groups = np.arange(n)
    groups = np.asarray(groups)
    labels, g = np.unique(groups, return_inverse=True)
    P = sp.csr_matrix((np.ones(n), (np.arange(n), g)), shape=(n, len(labels)))
    pattern = A.copy()
    pattern.data = np.ones_like(pattern.data)
    G = (P.T @ (pattern + pattern.T) @ P).tocsr()
    G.setdiag(0)
    G.eliminate_zeros()
    if G.nnz == 0:
        return np.argsort(g, kind="stable")
    order = np.asarray(pymetis.nested_dissection(
        adjacency=pymetis.CSRAdjacency(G.indptr.astype(np.int64), G.indices.astype(np.int64)))[0])
    rank = np.empty(len(labels), dtype=np.int64)
    rank[order] = np.arange(len(labels))
    return np.argsort(rank[g], kind="stable")


class SparseFactor:
    """Sparse LU of a symmetric matrix in a nested-dissection ordering.

    Diagonal pivoting is tried first, which keeps the symmetric ordering
    intact; if the resulting solve is inaccurate the matrix is refactored
    with threshold partial pivoting.
    """

    def __init__(self, A, groups=None, check_tol=1e-8):
        A = sp.csc_matrix(A)
        self.n = A.shape[0]
        self.perm = nested_dissection(A, groups)
        Ap = A[self.perm][:, self.perm].tocsc()
        self.pivoting = False
        self._lu = spla.splu(Ap, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                             options={"SymmetricMode": True})
        if check_tol is not None and self.n > 0:
            b = np.random.default_rng(0).standard_normal(self.n)
            x = self._lu.solve(b)
            err = np.linalg.norm(Ap @ x - b) / np.linalg.norm(b)
            if not np.isfinite(err) or err > check_tol:
                self._lu = spla.splu(Ap, permc_spec="NATURAL", diag_pivot_thresh=0.1)
                self.pivoting = True

    @property
    def nnz(self):
        return self._lu.L.nnz + self._lu.U.nnz

    def solve(self, b):
        x = np.empty_like(b, dtype=float)
        x[self.perm] = self._lu.solve(np.asarray(b, dtype=float)[self.perm])
        return x


class BlockSGSPreconditioner:
    """``P = (L + D) D^{-1} (L^T + D)`` over a 3x3 block partition.

    ``D`` holds the diagonal blocks of ``S``; blocks listed in ``negate``
    enter with flipped sign, which turns the negative semidefinite
    pressure blocks into positive definite ones.  ``L`` is the strictly
    lower block part of ``S`` itself.  Diagonal blocks are inverted with
    exact sparse LU factorizations.
    """

    def __init__(self, S, sizes, negate=(False, True, True), groups=None):
        S = sp.csr_matrix(S)
        sizes = tuple(int(s) for s in sizes)
        if sum(sizes) != S.shape[0]:
            raise ValueError("block sizes do not add up to the matrix size")
        self.sizes = sizes
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.negate = tuple(bool(s) for s in negate)
        self.S = S
        self.n = S.shape[0]
        self.groups = groups
        self._lu = None
        self.setup_time = 0.0

    def _slice(self, i):
        return slice(self.offsets[i], self.offsets[i + 1])

    def block(self, i, j):
        return self.S[self._slice(i), self._slice(j)]

    @property
    def factorized(self):
        return self._lu is not None

    def factorize(self):
        t0 = time.perf_counter()
        lus = []
        for i in range(3):
            if self.sizes[i] == 0:
                lus.append(None)
                continue
            D = self.block(i, i).tocsc()
            if self.negate[i]:
                D = -D
            grp = None if self.groups is None else self.groups[self._slice(i)]
            lus.append(SparseFactor(D, grp))
        self._lower = {(i, j): self.block(i, j).tocsr() for i in range(3) for j in range(i)}
        self._upper = {(j, i): m.T.tocsr() for (i, j), m in self._lower.items()}
        self._lu = lus
        self.setup_time = time.perf_counter() - t0
        return self

    def _dsolve(self, i, r):
        if self.sizes[i] == 0:
            return r.copy()
        return self._lu[i].solve(r)

    def apply(self, r):
        if not self.factorized:
            raise PreconditionerStateError("preconditioner has not been factorized")
        r = np.asarray(r, dtype=float)
        if r.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got {r.shape}")
        rb = [r[self._slice(i)] for i in range(3)]
        y = []
        for i in range(3):
            t = rb[i].copy()
            for j in range(i):
                t -= self._lower[i, j] @ y[j]
            y.append(self._dsolve(i, t))
        z = [None, None, None]
        for i in (2, 1, 0):
            t = np.zeros(self.sizes[i])
            for j in range(i + 1, 3):
                t += self._upper[i, j] @ z[j]
            z[i] = y[i] - self._dsolve(i, t) if i < 2 else y[i]
        return np.concatenate(z)

    __call__ = apply

    def dense(self):
        """Dense ``P`` for small verification problems."""
        S = self.S.toarray()
        D = np.zeros_like(S)
        L = np.zeros_like(S)
        for i in range(3):
            si = self._slice(i)
            D[si, si] = -S[si, si] if self.negate[i] else S[si, si]
            for j in range(i):
                L[si, self._slice(j)] = S[si, self._slice(j)]
        return (L + D) @ np.linalg.solve(D, (L + D).T)


def apply_sgs(preconditioner, r):
    return preconditioner.apply(r)


def _operator(A):
    if callable(A) and not hasattr(A, "shape"):
        return A
    return lambda x: A @ x


def _precond(M, Z):
    if M is None:
        def apply(r):
            return project_nullspace(r, Z)
        return apply
    if Z is None:
        return M
    return lambda r: project_nullspace(M(r), Z)


def minres(S, rhs, preconditioner=None, tol=1e-12, maxit=1000, nullspace=None, x0=None):
    """Preconditioned MINRES for a symmetric (possibly singular) system.

    The preconditioner must be symmetric positive definite on the
    complement of ``nullspace``; a negative inner product raises
    :class:`IndefinitePreconditionerError`.
    """
    t0 = time.perf_counter()
    b = np.asarray(rhs, dtype=float)
    n = len(b)
    Z = _basis(nullspace, n)
    matvec = _operator(S)
    prec = _precond(preconditioner, Z)
    report = SolveReport("minres")
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else project_nullspace(x0, Z)
    if bnorm == 0.0:
        report.residuals.append(0.0)
        report.converged = True
        report.time = time.perf_counter() - t0
        return np.zeros(n), report

    r1 = b - matvec(x)
    res = np.linalg.norm(r1) / bnorm
    report.residuals.append(res)
    if res <= tol:
        report.converged = True
        report.time = time.perf_counter() - t0
        return x, report
    y = prec(r1)
    beta1 = r1 @ y
    if beta1 < 0:
        raise IndefinitePreconditionerError("preconditioner is not positive definite")
    beta1 = np.sqrt(beta1)
    oldb, beta, dbar, epsln = 0.0, beta1, 0.0, 0.0
    phibar, cs, sn = beta1, -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1.copy()
    eps = np.finfo(float).eps

    for itn in range(1, maxit + 1):
        v = y / beta
        y = matvec(v)
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = v @ y
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = prec(r2)
        oldb = beta
        beta = r2 @ y
        if beta < -1e-10 * abs(oldb) ** 2:
            raise IndefinitePreconditionerError("preconditioner is not positive definite")
        beta = np.sqrt(max(beta, 0.0))
        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(np.hypot(gbar, beta), eps)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar
        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w

        res = np.linalg.norm(b - matvec(x)) / bnorm
        report.residuals.append(res)
        report.iterations = itn
        if res <= tol:
            report.converged = True
            break
        if beta <= eps * beta1:
            # Krylov space exhausted; the true residual decides
            break

    report.time = time.perf_counter() - t0
    return project_nullspace(x, Z), report


def gmres_restarted(S, rhs, preconditioner=None, restart=30, tol=1e-12, maxit=1000,
                    nullspace=None, x0=None):
    """Right-preconditioned GMRES with restarts every ``restart`` iterations."""
    t0 = time.perf_counter()
    b = np.asarray(rhs, dtype=float)
    n = len(b)
    Z = _basis(nullspace, n)
    matvec = _operator(S)
    prec = _precond(preconditioner, Z)
    report = SolveReport("gmres")
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else project_nullspace(x0, Z)
    if bnorm == 0.0:
        report.residuals.append(0.0)
        report.converged = True
        report.time = time.perf_counter() - t0
        return np.zeros(n), report
    m = int(restart)
    if m < 1:
        raise ValueError("restart must be >= 1")

    r = b - matvec(x)
    report.residuals.append(np.linalg.norm(r) / bnorm)
    if report.residuals[-1] <= tol:
        report.converged = True
        report.time = time.perf_counter() - t0
        return x, report

    total = 0
    while total < maxit:
        beta = np.linalg.norm(r)
        V = np.zeros((m + 1, n))
        W = np.zeros((m, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        xk = x
        for j in range(m):
            W[j] = prec(V[j])
            w = matvec(W[j])
            for _ in range(2):
                h = V[:j + 1] @ w
                w -= h @ V[:j + 1]
                H[:j + 1, j] += h
            H[j + 1, j] = np.linalg.norm(w)
            breakdown = not H[j + 1, j] > 0
            if not breakdown:
                V[j + 1] = w / H[j + 1, j]
            for i in range(j):
                a, c = H[i, j], H[i + 1, j]
                H[i, j] = cs[i] * a + sn[i] * c
                H[i + 1, j] = -sn[i] * a + cs[i] * c
            d = np.hypot(H[j, j], H[j + 1, j])
            cs[j], sn[j] = (1.0, 0.0) if d == 0 else (H[j, j] / d, H[j + 1, j] / d)
            H[j, j] = d
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            y = _upper_solve(H[:j + 1, :j + 1], g[:j + 1])
            xk = x + y @ W[:j + 1]
            total += 1
            res = np.linalg.norm(b - matvec(xk)) / bnorm
            report.residuals.append(res)
            report.iterations = total
            if res <= tol:
                report.converged = True
                break
            if total >= maxit or breakdown:
                break
        x = xk
        if report.converged or total >= maxit:
            break
        r = b - matvec(x)
        if breakdown:
            # invariant Krylov space without reaching tolerance: restarting cannot help
            break

    report.time = time.perf_counter() - t0
    return project_nullspace(x, Z), report


def _upper_solve(R, g):
    from scipy.linalg import solve_triangular

    return solve_triangular(R, g, lower=False, check_finite=False)


def load_matrix_market(path, rhs_path=None):
    """Read a Matrix Market matrix (and optional dense right-hand side)."""
    A = as_csr(scipy.io.mmread(str(Path(path))))
    if rhs_path is None:
        return A
    b = np.asarray(scipy.io.mmread(str(Path(rhs_path)))).ravel()
    return A, b
