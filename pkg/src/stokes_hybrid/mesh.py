"""Conforming triangulations of polygonal domains.

A :class:`Mesh` stores vertices, counterclockwise triangles and the facet
(edge) connectivity derived from them.  Local edge ``e`` of a cell is the
edge opposite local vertex ``e``, i.e. it runs from ``cells[c, (e+1) % 3]``
to ``cells[c, (e+2) % 3]``.  Global facets are stored with sorted vertex
indices, so their orientation is fixed by the global vertex numbering.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Mesh",
    "CellGeometry",
    "MeshFormatError",
    "generate_rectangle",
    "generate_l_shape",
    "uniform_refine",
    "load_gmsh",
    "write_gmsh",
    "load_json",
]

# local edge e -> (start, end) local vertices
EDGE_VERTICES = np.array([[1, 2], [2, 0], [0, 1]])


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed or describes a bad mesh."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class CellGeometry:
    """Affine geometry of every cell, stored as stacked arrays.

    ``jacobian[c]`` maps reference coordinates to physical ones,
    ``x = x0 + J xi``.  ``h`` is the length scale used by the penalty and
    the discrete norms: the smallest altitude ``2 |K| / diameter``, which
    keeps the trace-inequality constant bounded on stretched cells.
    ``diameter`` is the longest edge.
    """

    jacobian: np.ndarray        # (nc, 2, 2)
    det: np.ndarray             # (nc,), positive for ccw cells
    inv: np.ndarray             # (nc, 2, 2)
    area: np.ndarray            # (nc,)
    h: np.ndarray               # (nc,)
    edge_length: np.ndarray     # (nc, 3)
    normals: np.ndarray         # (nc, 3, 2) outward unit normals
    origin: np.ndarray          # (nc, 2) coordinates of local vertex 0
    diameter: np.ndarray        # (nc,)

    def subset(self, idx):
        return CellGeometry(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))

    def map_points(self, ref_points):
        """Physical coordinates of reference points, shape (nc, nq, 2)."""
        return self.origin[:, None, :] + np.einsum("cij,qj->cqi", self.jacobian, ref_points)


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    cells: np.ndarray
    boundary_tags: dict = field(default_factory=dict)

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=float)
        cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ValueError("vertices must have shape (nv, 2)")
        if cells.ndim != 2 or cells.shape[1] != 3:
            raise ValueError("cells must have shape (nc, 3)")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "cells", cells)
        self._build_topology()

    def _build_topology(self):
        cells = self.cells
        nc = len(cells)
        if nc == 0:
            raise ValueError("mesh has no cells")
        if cells.min() < 0 or cells.max() >= len(self.vertices):
            raise ValueError("cell references an unknown vertex")

        p = self.vertices[cells]
        signed = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
        if np.any(signed <= 0.0):
            bad = np.flatnonzero(signed <= 0.0)
            raise ValueError(f"cells with non-positive area: {bad[:10].tolist()}")

        edges = cells[:, EDGE_VERTICES]                      # (nc, 3, 2)
        keys = np.sort(edges.reshape(-1, 2), axis=1)
        facets, inverse, counts = np.unique(keys, axis=0, return_inverse=True,
                                            return_counts=True)
        inverse = inverse.reshape(-1)
        if np.any(counts > 2):
            raise ValueError("non-manifold mesh: an edge is shared by more than two cells")

        nf = len(facets)
        order = np.argsort(inverse, kind="stable")
        # half-edges grouped by facet; lower cell index comes first
        first = np.full(nf, -1, dtype=np.int64)
        second = np.full(nf, -1, dtype=np.int64)
        sorted_f = inverse[order]
        is_first = np.ones(len(order), dtype=bool)
        is_first[1:] = sorted_f[1:] != sorted_f[:-1]
        first[sorted_f[is_first]] = order[is_first]
        second[sorted_f[~is_first]] = order[~is_first]

        facet_cells = np.full((nf, 2), -1, dtype=np.int64)
        facet_local = np.full((nf, 2), -1, dtype=np.int64)
        facet_cells[:, 0], facet_local[:, 0] = np.divmod(first, 3)
        has2 = second >= 0
        facet_cells[has2, 1], facet_local[has2, 1] = np.divmod(second[has2], 3)

        object.__setattr__(self, "facets", facets)
        object.__setattr__(self, "cell_facets", inverse.reshape(nc, 3))
        object.__setattr__(self, "facet_cells", facet_cells)
        object.__setattr__(self, "facet_local", facet_local)
        object.__setattr__(self, "boundary_flags", ~has2)
        # +1 where the local edge runs along the facet's global orientation
        start = edges[:, :, 0]
        object.__setattr__(self, "cell_facet_sign",
                           np.where(start == facets[inverse.reshape(nc, 3), 0], 1, -1))

        tags = np.zeros(nf, dtype=np.int64)
        if self.boundary_tags:
            lookup = {tuple(sorted(k)): v for k, v in self.boundary_tags.items()}
            for f in np.flatnonzero(~has2):
                tags[f] = lookup.get((int(facets[f, 0]), int(facets[f, 1])), 0)
        object.__setattr__(self, "facet_tags", tags)

    # ----------------------------------------------------------------- sizes
    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_cells(self):
        return len(self.cells)

    @property
    def num_facets(self):
        return len(self.facets)

    @property
    def boundary_facets(self):
        return np.flatnonzero(self.boundary_flags)

    @property
    def interior_facets(self):
        return np.flatnonzero(~self.boundary_flags)

    def boundary_vertices(self):
        mask = np.zeros(self.num_vertices, dtype=bool)
        mask[self.facets[self.boundary_flags].ravel()] = True
        return mask

    # -------------------------------------------------------------- geometry
    def geometry(self):
        if "_geometry" not in self.__dict__:
            object.__setattr__(self, "_geometry", self._compute_geometry())
        return self.__dict__["_geometry"]

    def _compute_geometry(self):
        p = self.vertices[self.cells]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1] / det
        inv[:, 1, 1] = J[:, 0, 0] / det
        inv[:, 0, 1] = -J[:, 0, 1] / det
        inv[:, 1, 0] = -J[:, 1, 0] / det
        d = p[:, EDGE_VERTICES[:, 1]] - p[:, EDGE_VERTICES[:, 0]]   # (nc, 3, 2)
        length = np.hypot(d[..., 0], d[..., 1])
        normals = np.stack([d[..., 1], -d[..., 0]], axis=-1) / length[..., None]
        return CellGeometry(jacobian=J, det=det, inv=inv, area=0.5 * det,
                            h=np.abs(det) / length.max(axis=1), edge_length=length,
                            normals=normals, origin=p[:, 0].copy(),
                            diameter=length.max(axis=1))

    def facet_normals(self):
        """Global facet normals: the outward normal of the 'plus' (lower index) cell."""
        g = self.geometry()
        return g.normals[self.facet_cells[:, 0], self.facet_local[:, 0]]

    def facet_lengths(self):
        a, b = self.vertices[self.facets[:, 0]], self.vertices[self.facets[:, 1]]
        return np.hypot(*(b - a).T)

    def area(self):
        return float(self.geometry().area.sum())

    # ----------------------------------------------------------------- I/O
    def to_json(self, path=None):
        bt = [[int(a), int(b), int(t)] for (a, b), t in sorted(self.boundary_tags.items())]
        data = {"vertices": self.vertices.tolist(), "cells": self.cells.tolist(),
                "boundary_tags": bt}
        text = json.dumps(data)
        if path is not None:
            Path(path).write_text(text)
        return text

    def info(self):
        g = self.geometry()
        return {
            "vertices": self.num_vertices,
            "cells": self.num_cells,
            "facets": self.num_facets,
            "boundary_facets": int(self.boundary_flags.sum()),
            "area": self.area(),
            "h_min": float(g.diameter.min()),
            "h_max": float(g.diameter.max()),
            "tags": sorted({int(t) for t in self.facet_tags[self.boundary_flags]}),
        }


def load_json(path_or_text):
    text = str(path_or_text)
    if not text.lstrip().startswith("{"):
        text = Path(path_or_text).read_text()
    data = json.loads(text)
    tags = {(a, b): t for a, b, t in data.get("boundary_tags", [])}
    return Mesh(np.array(data["vertices"], dtype=float).reshape(-1, 2),
                np.array(data["cells"], dtype=np.int64).reshape(-1, 3), tags)


def _tag_by_side(vertices, facets, boundary, box):
    """Tag boundary facets 1..4 = bottom, right, top, left of a bounding box."""
    x0, y0, x1, y1 = box
    tags = {}
    tol = 1e-12 * max(x1 - x0, y1 - y0)
    for f in np.flatnonzero(boundary):
        a, b = facets[f]
        m = 0.5 * (vertices[a] + vertices[b])
        if abs(m[1] - y0) < tol:
            t = 1
        elif abs(m[0] - x1) < tol:
            t = 2
        elif abs(m[1] - y1) < tol:
            t = 3
        elif abs(m[0] - x0) < tol:
            t = 4
        else:
            t = 5
        tags[(int(a), int(b))] = t
    return tags


def _structured_cells(nx, ny, pattern, offset=0):
    """Split an (nx+1) x (ny+1) vertex grid into 2*nx*ny ccw triangles."""
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    i, j = i.ravel(), j.ravel()
    v00 = offset + j * (nx + 1) + i
    v10, v01 = v00 + 1, v00 + nx + 1
    v11 = v01 + 1
    if pattern == "right":
        flip = np.zeros(len(i), dtype=bool)
    elif pattern == "left":
        flip = np.ones(len(i), dtype=bool)
    elif pattern == "crisscross":
        flip = (i + j) % 2 == 1
    else:
        raise ValueError(f"unknown diagonal pattern {pattern!r}")
    # lower-left to upper-right diagonal
    t1 = np.stack([v00, v10, v11], axis=1)
    t2 = np.stack([v00, v11, v01], axis=1)
    # upper-left to lower-right diagonal
    s1 = np.stack([v00, v10, v01], axis=1)
    s2 = np.stack([v10, v11, v01], axis=1)
    a = np.where(flip[:, None], s1, t1)
    b = np.where(flip[:, None], s2, t2)
    return np.stack([a, b], axis=1).reshape(-1, 3)


def generate_rectangle(x0, y0, x1, y1, nx, ny, pattern="right"):
    """Structured triangulation of ``[x0, x1] x [y0, y1]``.

    Each of the ``nx * ny`` rectangles is split along one diagonal:
    ``"right"`` (lower-left to upper-right), ``"left"``, or ``"crisscross"``
    (alternating in a checkerboard).  Boundary facets are tagged
    1 (bottom), 2 (right), 3 (top), 4 (left).
    """
    if not (x1 > x0 and y1 > y0):
        raise ValueError("rectangle must have positive extents")
    if int(nx) < 1 or int(ny) < 1:
        raise ValueError("nx and ny must be at least 1")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    cells = _structured_cells(nx, ny, pattern)
    mesh = Mesh(vertices, cells)
    tags = _tag_by_side(vertices, mesh.facets, mesh.boundary_flags, (x0, y0, x1, y1))
    return Mesh(vertices, cells, tags)


def generate_l_shape(n, pattern="right"):
    """Triangulation of ``(-1, 1)^2 minus [-1, 0] x [0, 1]``.

    ``n`` is the number of cells per unit length, so the mesh has ``6 n^2``
    triangles and the re-entrant corner at the origin is a vertex.
    """
    if int(n) < 1:
        raise ValueError("n must be at least 1")
    n = int(n)
    grid = generate_rectangle(-1.0, -1.0, 1.0, 1.0, 2 * n, 2 * n, pattern)
    centroids = grid.vertices[grid.cells].mean(axis=1)
    keep = ~((centroids[:, 0] < 0.0) & (centroids[:, 1] > 0.0))
    cells = grid.cells[keep]
    used = np.unique(cells)
    renumber = np.full(grid.num_vertices, -1, dtype=np.int64)
    renumber[used] = np.arange(len(used))
    vertices = grid.vertices[used]
    cells = renumber[cells]
    mesh = Mesh(vertices, cells)
    tags = {(int(a), int(b)): 1 for a, b in mesh.facets[mesh.boundary_flags]}
    return Mesh(vertices, cells, tags)


def uniform_refine(mesh):
    """Split every triangle into four congruent children via edge midpoints."""
    nv, nf = mesh.num_vertices, mesh.num_facets
    mid = 0.5 * (mesh.vertices[mesh.facets[:, 0]] + mesh.vertices[mesh.facets[:, 1]])
    vertices = np.vstack([mesh.vertices, mid])
    c = mesh.cells
    m = nv + mesh.cell_facets           # midpoint of local edge e is opposite vertex e
    cells = np.concatenate([
        np.stack([c[:, 0], m[:, 2], m[:, 1]], axis=1),
        np.stack([m[:, 2], c[:, 1], m[:, 0]], axis=1),
        np.stack([m[:, 1], m[:, 0], c[:, 2]], axis=1),
        np.stack([m[:, 0], m[:, 1], m[:, 2]], axis=1),
    ])
    # keep children of a parent contiguous
    cells = cells.reshape(4, -1, 3).transpose(1, 0, 2).reshape(-1, 3)
    tags = {}
    for f in mesh.boundary_facets:
        a, b = (int(v) for v in mesh.facets[f])
        t = int(mesh.facet_tags[f])
        tags[(a, nv + int(f))] = t
        tags[(int(nv + f), b)] = t
    return Mesh(vertices, cells, tags)


# ------------------------------------------------------------------ gmsh I/O
def load_gmsh(path):
    """Read a 2D triangle mesh in Gmsh MSH 2.2 ASCII format.

    Line elements (type 1) provide boundary tags from their physical group;
    triangles (type 2) are the cells.  Points (type 15) are ignored.
    """
    lines = Path(path).read_text().splitlines()
    pos = 0

    def expect(token):
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines) or lines[pos].strip() != token:
            raise MeshFormatError(f"expected {token}", pos + 1)
        pos += 1

    def next_line():
        nonlocal pos
        if pos >= len(lines):
            raise MeshFormatError("unexpected end of file", pos)
        pos += 1
        return pos, lines[pos - 1].split()

    expect("$MeshFormat")
    ln, parts = next_line()
    if not parts or parts[0] != "2.2":
        raise MeshFormatError(f"unsupported MSH version {parts[:1]}", ln)
    if len(parts) < 2 or parts[1] != "0":
        raise MeshFormatError("only ASCII MSH files are supported", ln)
    expect("$EndMeshFormat")

    node_index, coords = {}, []
    lines_tagged, triangles = {}, []
    while pos < len(lines):
        if not lines[pos].strip():
            pos += 1
            continue
        section = lines[pos].strip()
        pos += 1
        if section == "$Nodes":
            ln, parts = next_line()
            try:
                n = int(parts[0])
                for _ in range(n):
                    ln, parts = next_line()
                    node_index[int(parts[0])] = len(coords)
                    coords.append((float(parts[1]), float(parts[2])))
            except (ValueError, IndexError) as exc:
                raise MeshFormatError(f"bad node record ({exc})", ln) from None
            expect("$EndNodes")
        elif section == "$Elements":
            ln, parts = next_line()
            try:
                n = int(parts[0])
            except (ValueError, IndexError):
                raise MeshFormatError("bad element count", ln) from None
            for _ in range(n):
                ln, parts = next_line()
                try:
                    vals = [int(v) for v in parts]
                    etype, ntags = vals[1], vals[2]
                    tags, nodes = vals[3:3 + ntags], vals[3 + ntags:]
                except (ValueError, IndexError):
                    raise MeshFormatError("bad element record", ln) from None
                try:
                    if etype == 2:
                        if len(nodes) != 3:
                            raise MeshFormatError("triangle needs 3 nodes", ln)
                        triangles.append([node_index[v] for v in nodes])
                    elif etype == 1:
                        if len(nodes) != 2:
                            raise MeshFormatError("line needs 2 nodes", ln)
                        a, b = sorted(node_index[v] for v in nodes)
                        lines_tagged[(a, b)] = tags[0] if tags else 0
                    elif etype == 15:
                        continue
                    else:
                        raise MeshFormatError(f"unsupported element type {etype}", ln)
                except KeyError as exc:
                    raise MeshFormatError(f"element references unknown node {exc}", ln) from None
            expect("$EndElements")
        else:
            # skip unknown sections ($PhysicalNames, ...)
            end = "$End" + section[1:]
            while pos < len(lines) and lines[pos].strip() != end:
                pos += 1
            if pos >= len(lines):
                raise MeshFormatError(f"unterminated section {section}", pos)
            pos += 1

    if not triangles:
        raise MeshFormatError("no triangles found")
    vertices = np.array(coords, dtype=float)
    cells = np.array(triangles, dtype=np.int64)
    p = vertices[cells]
    signed = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
              - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    flip = signed < 0
    cells[flip] = cells[flip][:, [0, 2, 1]]
    used = np.unique(cells)
    renumber = np.full(len(vertices), -1, dtype=np.int64)
    renumber[used] = np.arange(len(used))
    tags = {}
    for (a, b), t in lines_tagged.items():
        if renumber[a] >= 0 and renumber[b] >= 0:
            tags[tuple(sorted((int(renumber[a]), int(renumber[b]))))] = t
    try:
        mesh = Mesh(vertices[used], renumber[cells], tags)
    except ValueError as exc:
        raise MeshFormatError(str(exc)) from None
    _check_conforming(mesh)
    return mesh


def _check_conforming(mesh):
    """Reject hanging nodes: no vertex may lie inside a boundary facet."""
    v = mesh.vertices
    for f in mesh.boundary_facets:
        a, b = mesh.facets[f]
        d = v[b] - v[a]
        L2 = d @ d
        w = v - v[a]
        t = (w @ d) / L2
        dist = np.abs(w[:, 0] * d[1] - w[:, 1] * d[0]) / np.sqrt(L2)
        inside = (t > 1e-10) & (t < 1 - 1e-10) & (dist < 1e-10 * np.sqrt(L2))
        if np.any(inside):
            raise MeshFormatError(
                f"non-conforming mesh: vertex {int(np.flatnonzero(inside)[0])} "
                f"hangs on facet ({a}, {b})")


def write_gmsh(mesh, path):
    """Write ``mesh`` as MSH 2.2 ASCII with boundary lines in their tag groups."""
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(mesh.num_vertices)]
    out += [f"{i + 1} {float(x)!r} {float(y)!r} 0" for i, (x, y) in enumerate(mesh.vertices)]
    out += ["$EndNodes", "$Elements"]
    elems = []
    for f in mesh.boundary_facets:
        a, b = mesh.facets[f]
        t = int(mesh.facet_tags[f])
        elems.append(f"1 2 {t} {t} {a + 1} {b + 1}")
    for a, b, c in mesh.cells:
        elems.append(f"2 2 0 0 {a + 1} {b + 1} {c + 1}")
    out.append(str(len(elems)))
    out += [f"{i + 1} {e}" for i, e in enumerate(elems)]
    out.append("$EndElements")
    Path(path).write_text("\n".join(out) + "\n")
