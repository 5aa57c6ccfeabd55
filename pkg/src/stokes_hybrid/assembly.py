"""Local element kernels and global block assembly.

The discrete operator is the symmetric block system

    [ A_uu  B^T ] [ u ]   [ L_u ]
    [ B     C   ] [ U ] = [ L   ],      U = (ubar, p, pbar),

with ``B = (A_ubar_u, B_pu, B_pbar_u)`` and ``C = diag(A_ubar_ubar, 0, 0)``.
``A_uu`` is block diagonal (one dense block per cell), which is what makes
static condensation possible.  Local blocks are computed for whole chunks
of cells at once with ``einsum``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .refelem import make_basis, make_quadrature, push_forward
from .spaces import MethodVariant

__all__ = [
    "penalty_parameter",
    "ReferenceTables",
    "reference_tables",
    "LocalBlocks",
    "BlockSystem",
    "assemble_local_a",
    "assemble_local_b",
    "assemble_local",
    "assemble_global",
    "assemble_norm_matrices",
    "CHUNK",
]

CHUNK = 4096
_REF_VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def penalty_parameter(k, variant):
    """Interior-penalty parameter for two-dimensional meshes."""
    if k < 1:
        raise ValueError("k must be >= 1")
    variant = MethodVariant.parse(variant)
    return float(6 * k * k if variant is MethodVariant.HDG else 4 * k * k)


@dataclass(frozen=True)
class ReferenceTables:
    k: int
    vel: object                 # P_k(triangle)
    pre: object                 # P_{k-1}(triangle)
    fac: object                 # P_k(interval)
    vol: object                 # volume rule, degree 2k + 2
    rhs: object                 # volume rule for data, degree 2k + 4
    edge: object                # interval rule, degree 2k + 2
    edge_points: np.ndarray     # (3, nqf, 2) reference points on each local edge
    edge_vals: np.ndarray       # (3, nqf, nk)
    edge_grads: np.ndarray      # (3, nqf, nk, 2) reference gradients
    fac_vals: np.ndarray        # (2, nqf, k+1): [0] along, [1] against facet orientation
    fac_mass: np.ndarray        # (k+1, k+1) on the unit interval
    fac_moments: np.ndarray     # (k+1,) integrals of facet basis on unit interval

    @property
    def nk(self):
        return len(self.vel)

    @property
    def nkm(self):
        return len(self.pre)


@lru_cache(maxsize=None)
def reference_tables(k, quad_degree=None, rhs_degree=None, edge_degree=None):
    vel = make_basis("triangle", k)
    pre = make_basis("triangle", k - 1)
    fac = make_basis("interval", k)
    vol = make_quadrature("triangle", quad_degree if quad_degree is not None else 2 * k + 2)
    rhs = make_quadrature("triangle", rhs_degree if rhs_degree is not None else 2 * k + 4)
    edge = make_quadrature("interval", edge_degree if edge_degree is not None else 2 * k + 2)
    s = edge.points[:, 0]
    pts = np.stack([_REF_VERTS[(e + 1) % 3][None, :]
                    + s[:, None] * (_REF_VERTS[(e + 2) % 3] - _REF_VERTS[(e + 1) % 3])[None, :]
                    for e in range(3)])
    fv = np.stack([fac.values(s[:, None]), fac.values(1.0 - s[:, None])])
    mass = np.einsum("q,qa,qb->ab", edge.weights, fv[0], fv[0])
    return ReferenceTables(
        k=k, vel=vel, pre=pre, fac=fac, vol=vol, rhs=rhs, edge=edge,
        edge_points=pts,
        edge_vals=np.stack([vel.values(p) for p in pts]),
        edge_grads=np.stack([vel.gradients(p) for p in pts]),
        fac_vals=fv, fac_mass=mass, fac_moments=fv[0].T @ edge.weights)


@dataclass
class _EdgeData:
    """Scalar edge integrals for one local edge of every cell in a chunk."""

    M: np.ndarray       # int phi_i phi_j                (nc, nk, nk)
    D: np.ndarray       # int phi_i dphi_j/dn            (nc, nk, nk)
    Mf: np.ndarray      # int psi_a phi_j                (nc, k+1, nk)
    Nf: np.ndarray      # int psi_a dphi_j/dn            (nc, k+1, nk)
    Ff: np.ndarray      # int psi_a psi_b                (nc, k+1, k+1)
    Dn: np.ndarray      # int dphi_i/dn dphi_j/dn        (nc, nk, nk)


def _edge_data(geom, sign, tab, e):
    L = geom.edge_length[:, e]
    w = L[:, None] * tab.edge.weights[None, :]                    # (nc, nqf)
    phi = tab.edge_vals[e]
    grads = np.einsum("qnj,cjk->cqnk", tab.edge_grads[e], geom.inv)
    dn = np.einsum("cqnk,ck->cqn", grads, geom.normals[:, e])
    psi = np.where((sign[:, e] > 0)[:, None, None], tab.fac_vals[0][None], tab.fac_vals[1][None])
    Mref = np.einsum("q,qi,qj->ij", tab.edge.weights, phi, phi)
    return _EdgeData(
        M=L[:, None, None] * Mref[None],
        D=np.einsum("cq,qi,cqj->cij", w, phi, dn),
        Mf=np.einsum("cq,cqa,qj->caj", w, psi, phi),
        Nf=np.einsum("cq,cqa,cqj->caj", w, psi, dn),
        Ff=L[:, None, None] * tab.fac_mass[None],
        Dn=np.einsum("cq,cqi,cqj->cij", w, dn, dn),
    )


@dataclass
class LocalBlocks:
    """Dense per-cell blocks for a chunk of cells (leading axis = cell)."""

    A_uu: np.ndarray            # (nc, 2nk, 2nk)
    A_bu: np.ndarray            # (nc, 6(k+1), 2nk)   test ubar, trial u
    A_bb: np.ndarray            # (nc, 6(k+1), 6(k+1))
    B_pu: np.ndarray            # (nc, nkm, 2nk)
    B_qu: np.ndarray            # (nc, 3(k+1), 2nk)   test pbar, trial u
    L_u: np.ndarray = None      # (nc, 2nk)

    def coupling(self):
        """Stacked rows (ubar, p, pbar) coupling to the cell velocity."""
        return np.concatenate([self.A_bu, self.B_pu, self.B_qu], axis=1)


def _vector_diag(S):
    """blockdiag(S, S) for a stack of scalar matrices."""
    nc, n, m = S.shape
    out = np.zeros((nc, 2, n, 2, m))
    out[:, 0, :, 0, :] = S
    out[:, 1, :, 1, :] = S
    return out.reshape(nc, 2 * n, 2 * m)


def assemble_local_a(geom, sign, tab, nu, alpha, edges=None):
    """Vector-Laplacian blocks of the hybrid interior-penalty form on each cell.

    Returns ``(A_uu, A_bu, A_bb)``.  ``edges`` may carry precomputed
    :class:`_EdgeData` for the three local edges.
    """
    k, nk = tab.k, tab.nk
    nc = len(geom.det)
    _, G, W, _ = push_forward(tab.vel, geom, tab.vol)
    K = np.einsum("cq,cqik,cqjk->cij", W, G, G)
    pen = alpha / geom.h
    edges = edges or [_edge_data(geom, sign, tab, e) for e in range(3)]
    A = K.copy()
    Abu = np.zeros((nc, 3, k + 1, 2, 2, nk))
    Abb = np.zeros((nc, 3, k + 1, 2, 3, k + 1, 2))
    for e, ed in enumerate(edges):
        A += pen[:, None, None] * ed.M - ed.D - ed.D.transpose(0, 2, 1)
        s = -pen[:, None, None] * ed.Mf + ed.Nf
        f = pen[:, None, None] * ed.Ff
        for d in range(2):
            Abu[:, e, :, d, d, :] = s
            Abb[:, e, :, d, e, :, d] = f
    nb = 6 * (k + 1)
    return (nu * _vector_diag(A), nu * Abu.reshape(nc, nb, 2 * nk),
            nu * Abb.reshape(nc, nb, nb))


def assemble_local_b(geom, sign, tab, edges=None):
    """Pressure-velocity coupling blocks ``(B_pu, B_qu)`` on each cell.

    ``B_pu = -int_K q div v`` and ``B_qu = sum_e int_e (v . n) qbar``.
    """
    k, nk, nkm = tab.k, tab.nk, tab.nkm
    nc = len(geom.det)
    _, G, W, _ = push_forward(tab.vel, geom, tab.vol)
    chi = tab.pre.values(tab.vol.points)
    Bp = -np.einsum("cq,qi,cqjd->cidj", W, chi, G).reshape(nc, nkm, 2 * nk)
    edges = edges or [_edge_data(geom, sign, tab, e) for e in range(3)]
    Bq = np.zeros((nc, 3, k + 1, 2, nk))
    for e, ed in enumerate(edges):
        for d in range(2):
            Bq[:, e, :, d, :] = geom.normals[:, e, d][:, None, None] * ed.Mf
    return Bp, Bq.reshape(nc, 3 * (k + 1), 2 * nk)


def _load_vector(geom, tab, f):
    if f is None:
        return np.zeros((len(geom.det), 2 * tab.nk))
    vals, _, W, X = push_forward(tab.vel, geom, tab.rhs)
    F = np.asarray(f(X.reshape(-1, 2))).reshape(X.shape[0], X.shape[1], 2)
    return np.einsum("cq,cqd,qi->cdi", W, F, vals).reshape(len(geom.det), -1)


def assemble_local(geom, sign, tab, nu, alpha, f=None):
    edges = [_edge_data(geom, sign, tab, e) for e in range(3)]
    A, Abu, Abb = assemble_local_a(geom, sign, tab, nu, alpha, edges)
    Bp, Bq = assemble_local_b(geom, sign, tab, edges)
    return LocalBlocks(A, Abu, Abb, Bp, Bq, _load_vector(geom, tab, f))


def _chunks(n, size=CHUNK):
    for start in range(0, n, size):
        yield np.arange(start, min(n, start + size))


def _scatter(rows, cols, vals, shape):
    mask = (rows >= 0) & (cols >= 0)
    return sp.csr_matrix((vals[mask], (rows[mask], cols[mask])), shape=shape)


@dataclass(eq=False)
class BlockSystem:
    """Assembled block operator with Dirichlet data already lifted.

    Local blocks are kept per cell.  Rows and columns belonging to
    constrained facet-velocity dofs are zeroed in ``A_bu``/``A_bb``; their
    values ``g`` have been moved into ``L_u`` and ``Lbar``.
    """

    dofmap: object
    nu: float
    alpha: float
    A_uu: np.ndarray            # (nc, 2nk, 2nk)
    A_bu: np.ndarray            # (nc, 6(k+1), 2nk)
    A_bb: np.ndarray            # (nc, 6(k+1), 6(k+1))
    B_pu: np.ndarray            # (nc, nkm, 2nk)
    B_qu: np.ndarray            # (nc, 3(k+1), 2nk)
    L_u: np.ndarray             # (nc, 2nk)
    Lbar: np.ndarray            # (nc, 6(k+1) + nkm + 3(k+1)) local (ubar, p, pbar) loads
    g: np.ndarray               # (n_ubar,) boundary values of the facet velocity
    flux_defect: float = 0.0

    def coupling(self, cells=slice(None)):
        return np.concatenate([self.A_bu[cells], self.B_pu[cells], self.B_qu[cells]], axis=1)

    def _full_U_index(self):
        dm = self.dofmap
        return np.concatenate([dm.cell_ubar, dm.n_ubar + dm.cell_p,
                               dm.n_ubar + dm.n_p + dm.cell_pbar], axis=1)

    def B(self):
        """Sparse coupling matrix, rows (ubar, p, pbar) over all facet dofs, cols u."""
        dm = self.dofmap
        rows = self._full_U_index()
        Bl = self.coupling()
        r = np.broadcast_to(rows[:, :, None], Bl.shape)
        c = np.broadcast_to(dm.cell_u[:, None, :], Bl.shape)
        return _scatter(r.ravel(), c.ravel(), Bl.ravel(),
                        (dm.n_ubar + dm.n_p + dm.n_pbar, dm.n_u))

    def C(self):
        dm = self.dofmap
        n = dm.n_ubar + dm.n_p + dm.n_pbar
        r = np.broadcast_to(dm.cell_ubar[:, :, None], self.A_bb.shape)
        c = np.broadcast_to(dm.cell_ubar[:, None, :], self.A_bb.shape)
        return _scatter(r.ravel(), c.ravel(), self.A_bb.ravel(), (n, n))

    def Auu(self):
        dm = self.dofmap
        r = np.broadcast_to(dm.cell_u[:, :, None], self.A_uu.shape)
        c = np.broadcast_to(dm.cell_u[:, None, :], self.A_uu.shape)
        return _scatter(r.ravel(), c.ravel(), self.A_uu.ravel(), (dm.n_u, dm.n_u))

    def full_matrix(self):
        """Whole saddle-point operator, ordering (u, ubar, p, pbar).

        Constrained facet-velocity rows/columns carry an identity.
        """
        dm = self.dofmap
        B = self.B()
        C = self.C().tolil()
        idx = np.flatnonzero(dm.constrained)
        C[idx, idx] = 1.0
        return sp.bmat([[self.Auu(), B.T], [B, C.tocsr()]], format="csr")

    def full_rhs(self):
        dm = self.dofmap
        Lbar = np.zeros(dm.n_ubar + dm.n_p + dm.n_pbar)
        np.add.at(Lbar, self._full_U_index().ravel(), self.Lbar.ravel())
        Lbar[:dm.n_ubar][dm.constrained] = self.g[dm.constrained]
        return np.concatenate([self.L_u.ravel(), Lbar])


def boundary_flux_defect(mesh, dofmap, g, tab):
    """Net outflow of the interpolated boundary velocity over the boundary."""
    bf = mesh.boundary_facets
    if len(bf) == 0:
        return 0.0
    nodes = dofmap.facet_unode[bf]                              # (nb, k+1)
    n = mesh.facet_normals()[bf]
    gn = g[2 * nodes] * n[:, 0:1] + g[2 * nodes + 1] * n[:, 1:2]
    return float(np.sum(mesh.facet_lengths()[bf] * (gn @ tab.fac_moments)))


def assemble_global(mesh, dofmap, nu, alpha=None, f=None, g_boundary=None, tables=None):
    """Assemble local blocks and apply Dirichlet lifting.

    ``f(points) -> (n, 2)`` is evaluated at quadrature points;
    ``g_boundary(points) -> (n, 2)`` is interpolated at constrained nodes.
    The normal flux of the interpolated data enters the facet-pressure
    equations of boundary facets; its net defect is spread uniformly over
    the boundary so that the system stays compatible with the
    constant-pressure kernel.
    """
    from .spaces import interpolate_facet

    k = dofmap.k
    if alpha is None:
        alpha = penalty_parameter(k, dofmap.variant)
    tab = tables or reference_tables(k)
    geom = mesh.geometry()
    nc = mesh.num_cells
    g = interpolate_facet(g_boundary, dofmap)
    defect = boundary_flux_defect(mesh, dofmap, g, tab)
    perimeter = float(mesh.facet_lengths()[mesh.boundary_flags].sum())

    nu_l, nb = 2 * tab.nk, 6 * (k + 1)
    nq = 3 * (k + 1)
    A = np.empty((nc, nu_l, nu_l))
    Abu = np.empty((nc, nb, nu_l))
    Abb = np.empty((nc, nb, nb))
    Bp = np.empty((nc, tab.nkm, nu_l))
    Bq = np.empty((nc, nq, nu_l))
    Lu = np.empty((nc, nu_l))
    Lbar = np.zeros((nc, nb + tab.nkm + nq))
    cons = dofmap.constrained
    bflag = mesh.boundary_flags

    for idx in _chunks(nc):
        gc = geom.subset(idx)
        lb = assemble_local(gc, mesh.cell_facet_sign[idx], tab, nu, alpha, f)
        gl = g[dofmap.cell_ubar[idx]]
        cl = cons[dofmap.cell_ubar[idx]]
        lu = lb.L_u - np.einsum("cab,ca->cb", lb.A_bu, gl)
        lbb = -np.einsum("cab,cb->ca", lb.A_bb, gl)
        # boundary-facet normal flux of the data for the pbar equations
        on_bnd = bflag[mesh.cell_facets[idx]]                  # (n, 3)
        gl3 = gl.reshape(len(idx), 3, k + 1, 2)
        gn = np.einsum("cead,ced->cea", gl3, gc.normals)
        flux = np.einsum("ab,ceb->cea", tab.fac_mass, gn) * gc.edge_length[:, :, None]
        if perimeter > 0:
            flux -= (defect / perimeter) * gc.edge_length[:, :, None] * tab.fac_moments
        flux *= on_bnd[:, :, None]
        lb.A_bu[cl] = 0.0
        lbb[cl] = 0.0
        abb = lb.A_bb
        abb[np.broadcast_to(cl[:, :, None], abb.shape)] = 0.0
        abb[np.broadcast_to(cl[:, None, :], abb.shape)] = 0.0
        A[idx], Abu[idx], Abb[idx] = lb.A_uu, lb.A_bu, abb
        Bp[idx], Bq[idx], Lu[idx] = lb.B_pu, lb.B_qu, lu
        Lbar[idx, :nb] = lbb
        Lbar[idx, nb + tab.nkm:] = flux.reshape(len(idx), -1)

    return BlockSystem(dofmap=dofmap, nu=float(nu), alpha=float(alpha), A_uu=A, A_bu=Abu,
                       A_bb=Abb, B_pu=Bp, B_qu=Bq, L_u=Lu, Lbar=Lbar, g=g,
                       flux_defect=defect)


def assemble_norm_matrices(mesh, dofmap, alpha):
    """Sparse Gram matrices of the discrete stability norms.

    Returns ``(Nv, Nvp, Np)``: ``Nv`` and ``Nvp`` act on ``(u, ubar)`` in
    full numbering (cell velocity first) and realize the squared norms
    |||.|||_v and |||.|||_v'; ``Np`` acts on ``(p, pbar)`` and realizes
    ||q||^2 + sum_K h_K ||qbar||^2_dK.
    """
    k = dofmap.k
    tab = reference_tables(k)
    geom = mesh.geometry()
    nk, nb = tab.nk, 6 * (k + 1)
    nv = dofmap.n_u + dofmap.n_ubar
    npq = dofmap.n_p + dofmap.n_pbar
    vidx = np.concatenate([dofmap.cell_u, dofmap.n_u + dofmap.cell_ubar], axis=1)
    pidx = np.concatenate([dofmap.cell_p, dofmap.n_p + dofmap.cell_pbar], axis=1)
    Nv = sp.csr_matrix((nv, nv))
    Nvp = sp.csr_matrix((nv, nv))
    Np = sp.csr_matrix((npq, npq))
    for idx in _chunks(mesh.num_cells):
        gc = geom.subset(idx)
        sign = mesh.cell_facet_sign[idx]
        n = len(idx)
        _, G, W, _ = push_forward(tab.vel, gc, tab.vol)
        K = np.einsum("cq,cqik,cqjk->cij", W, G, G)
        Muu = np.zeros((n, nk, nk))
        Dnn = np.zeros((n, nk, nk))
        Mbu = np.zeros((n, 3, k + 1, nk))
        Mbb = np.zeros((n, 3, k + 1, 3, k + 1))
        for e in range(3):
            ed = _edge_data(gc, sign, tab, e)
            Muu += ed.M
            Dnn += ed.Dn
            Mbu[:, e] = ed.Mf
            Mbb[:, e, :, e, :] = ed.Ff
        pen = (alpha / gc.h)[:, None, None]
        # scalar (u, ubar) block of the penalty term  ||ubar - u||^2
        s = nk + 3 * (k + 1)
        P = np.zeros((n, s, s))
        P[:, :nk, :nk] = Muu
        P[:, nk:, :nk] = -Mbu.reshape(n, -1, nk)
        P[:, :nk, nk:] = -Mbu.reshape(n, -1, nk).transpose(0, 2, 1)
        P[:, nk:, nk:] = Mbb.reshape(n, 3 * (k + 1), 3 * (k + 1))
        Sv = pen * P
        Sv[:, :nk, :nk] += K
        Svp = Sv.copy()
        Svp[:, :nk, :nk] += Dnn / pen
        # expand the scalar matrices to the vector local ordering
        perm = np.concatenate([np.arange(nk), nk + np.arange(3 * (k + 1))])
        Vv = np.zeros((n, 2 * nk + nb, 2 * nk + nb))
        Vvp = np.zeros_like(Vv)
        loc = [np.concatenate([d * nk + np.arange(nk), 2 * nk + 2 * np.arange(3 * (k + 1)) + d])
               for d in range(2)]
        for d in range(2):
            ix = np.ix_(np.arange(n), loc[d], loc[d])
            Vv[ix] = Sv[:, perm][:, :, perm]
            Vvp[ix] = Svp[:, perm][:, :, perm]
        r = np.broadcast_to(vidx[idx][:, :, None], Vv.shape).ravel()
        c = np.broadcast_to(vidx[idx][:, None, :], Vv.shape).ravel()
        Nv = Nv + _scatter(r, c, Vv.ravel(), (nv, nv))
        Nvp = Nvp + _scatter(r, c, Vvp.ravel(), (nv, nv))

        chi = tab.pre.values(tab.vol.points)
        Wp = push_forward(tab.vel, gc, tab.vol)[2]
        Mp = np.einsum("cq,qi,qj->cij", Wp, chi, chi)
        npk = tab.nkm
        Q = np.zeros((n, npk + 3 * (k + 1), npk + 3 * (k + 1)))
        Q[:, :npk, :npk] = Mp
        Q[:, npk:, npk:] = gc.h[:, None, None] * Mbb.reshape(n, 3 * (k + 1), 3 * (k + 1))
        r = np.broadcast_to(pidx[idx][:, :, None], Q.shape).ravel()
        c = np.broadcast_to(pidx[idx][:, None, :], Q.shape).ravel()
        Np = Np + _scatter(r, c, Q.ravel(), (npq, npq))
    return Nv, Nvp, Np
