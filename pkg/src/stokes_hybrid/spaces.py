"""Global degree-of-freedom numbering for the four discrete fields.

Cell velocity ``u`` and cell pressure ``p`` are fully discontinuous and
numbered cell-major.  Facet velocity ``ubar`` and facet pressure ``pbar``
live on the mesh skeleton; they are either discontinuous between facets
(one private set of ``k + 1`` nodes per facet) or continuous (vertex
nodes shared between facets, ``k - 1`` private interior nodes per facet).

Local orderings used throughout the package, per cell:

* ``u``: ``comp * n_k + i`` with ``n_k = dim P_k(triangle)``
* ``p``: ``i`` over ``P_{k-1}(triangle)``
* ``ubar``: ``(e * (k + 1) + j) * 2 + comp`` for local edge ``e`` and
  facet node ``j`` (node 0 at the facet's lower global vertex, node 1 at
  the upper one, nodes ``2..k`` interior)
* ``pbar``: ``e * (k + 1) + j``
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .refelem import make_basis

__all__ = ["MethodVariant", "DofMap", "build_dofmap", "interpolate_facet"]


class MethodVariant(enum.Enum):
    HDG = "HDG"
    EDG = "EDG"
    EDG_HDG = "EDG_HDG"

    @property
    def continuous_velocity(self):
        return self is not MethodVariant.HDG

    @property
    def continuous_pressure(self):
        return self is MethodVariant.EDG

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper().replace("-", "_").replace("–", "_")
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown method variant {value!r}") from None

    def __str__(self):
        return self.value


def _facet_nodes(mesh, k, continuous):
    """Scalar node ids of shape (nf, k + 1) and the node count."""
    nf, nv = mesh.num_facets, mesh.num_vertices
    nodes = np.empty((nf, k + 1), dtype=np.int64)
    if not continuous:
        nodes[:] = np.arange(nf * (k + 1)).reshape(nf, k + 1)
        return nodes, nf * (k + 1)
    nodes[:, :2] = mesh.facets
    nodes[:, 2:] = nv + np.arange(nf * (k - 1)).reshape(nf, k - 1)
    return nodes, nv + nf * (k - 1)


@dataclass(frozen=True, eq=False)
class DofMap:
    mesh: object
    k: int
    variant: MethodVariant
    n_u: int
    n_p: int
    n_ubar: int
    n_pbar: int
    cell_u: np.ndarray              # (nc, 2 n_k)
    cell_p: np.ndarray              # (nc, n_{k-1})
    facet_unode: np.ndarray         # (nf, k+1) scalar facet-velocity nodes
    facet_pnode: np.ndarray         # (nf, k+1) facet-pressure dofs
    cell_ubar: np.ndarray           # (nc, 6 (k+1))
    cell_pbar: np.ndarray           # (nc, 3 (k+1))
    unode_coords: np.ndarray        # (n_ubar // 2, 2)
    constrained: np.ndarray         # (n_ubar,) bool, facet velocity on the boundary
    ubar_free_index: np.ndarray     # (n_ubar,) position among free dofs or -1

    @property
    def n_ubar_free(self):
        return int(self.n_ubar - self.constrained.sum())

    @property
    def n_constrained(self):
        return int(self.constrained.sum())

    @property
    def n_condensed(self):
        return self.n_ubar_free + self.n_p + self.n_pbar

    @property
    def block_sizes(self):
        return (self.n_ubar_free, self.n_p, self.n_pbar)

    @property
    def n_full(self):
        return self.n_u + self.n_ubar + self.n_p + self.n_pbar

    def condensed_cell_index(self):
        """Per-cell map local ``(ubar, p, pbar)`` -> condensed index (-1 = constrained)."""
        nf = self.n_ubar_free
        return np.concatenate([self.ubar_free_index[self.cell_ubar],
                               nf + self.cell_p,
                               nf + self.n_p + self.cell_pbar], axis=1)

    def split_condensed(self, U):
        a, b, _ = self.block_sizes
        return U[:a], U[a:a + b], U[a + b:]

    def condensed_groups(self):
        """Labels tying together condensed unknowns that always couple alike.

        Both components of a facet-velocity node share a label, as do all
        cell-pressure unknowns of one cell.
        """
        nf, npre = self.n_ubar_free, self.n_p
        free = np.flatnonzero(~self.constrained)
        nkm = self.cell_p.shape[1]
        return np.concatenate([free // 2,
                               self.n_ubar + np.arange(npre) // nkm,
                               self.n_ubar + npre + np.arange(self.n_pbar)])

    def pressure_nullspace(self):
        """Unit vector spanning the constant-pressure kernel in condensed ordering."""
        z = np.zeros(self.n_condensed)
        z[self.n_ubar_free:] = 1.0
        return z / np.linalg.norm(z)


def build_dofmap(mesh, k, variant):
    variant = MethodVariant.parse(variant)
    if int(k) != k or k < 1:
        raise ValueError("polynomial degree k must be an integer >= 1")
    k = int(k)
    nc = mesh.num_cells
    nk = len(make_basis("triangle", k))
    nkm = len(make_basis("triangle", k - 1))

    cell_u = np.arange(nc * 2 * nk).reshape(nc, 2 * nk)
    cell_p = np.arange(nc * nkm).reshape(nc, nkm)

    unode, n_unode = _facet_nodes(mesh, k, variant.continuous_velocity)
    pnode, n_pbar = _facet_nodes(mesh, k, variant.continuous_pressure)

    cf = mesh.cell_facets                                     # (nc, 3)
    cn = unode[cf]                                            # (nc, 3, k+1)
    cell_ubar = (2 * cn[..., None] + np.arange(2)).reshape(nc, -1)
    cell_pbar = pnode[cf].reshape(nc, -1)

    # physical node coordinates along each facet (t from lower to upper vertex)
    t = make_basis("interval", k).nodes[:, 0]
    a = mesh.vertices[mesh.facets[:, 0]]
    b = mesh.vertices[mesh.facets[:, 1]]
    xy = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    coords = np.empty((n_unode, 2))
    coords[unode.ravel()] = xy.reshape(-1, 2)

    on_boundary = np.zeros(n_unode, dtype=bool)
    on_boundary[unode[mesh.boundary_flags].ravel()] = True
    constrained = np.repeat(on_boundary, 2)
    free_index = np.full(2 * n_unode, -1, dtype=np.int64)
    free_index[~constrained] = np.arange(int((~constrained).sum()))

    return DofMap(mesh=mesh, k=k, variant=variant,
                  n_u=nc * 2 * nk, n_p=nc * nkm, n_ubar=2 * n_unode, n_pbar=n_pbar,
                  cell_u=cell_u, cell_p=cell_p, facet_unode=unode, facet_pnode=pnode,
                  cell_ubar=cell_ubar, cell_pbar=cell_pbar, unode_coords=coords,
                  constrained=constrained, ubar_free_index=free_index)


def interpolate_facet(g, dofmap):
    """Nodal interpolant of boundary velocity ``g`` at constrained facet nodes.

    ``g`` maps points of shape (n, 2) to velocities (n, 2).  Entries for
    unconstrained facet-velocity dofs are zero.
    """
    out = np.zeros(dofmap.n_ubar)
    if g is None:
        return out
    nodes = np.flatnonzero(dofmap.constrained[::2])
    if len(nodes):
        vals = np.asarray(g(dofmap.unode_coords[nodes]), dtype=float).reshape(len(nodes), 2)
        out[2 * nodes] = vals[:, 0]
        out[2 * nodes + 1] = vals[:, 1]
    return out
