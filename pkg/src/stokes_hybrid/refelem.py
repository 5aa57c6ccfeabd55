"""Quadrature and nodal Lagrange bases on the reference triangle and interval.

The reference triangle has vertices (0, 0), (1, 0), (0, 1); the reference
interval is [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

__all__ = [
    "QuadratureRule",
    "ReferenceBasis",
    "DegenerateCellError",
    "make_quadrature",
    "make_basis",
    "push_forward",
    "MAX_QUADRATURE_DEGREE",
]

MAX_QUADRATURE_DEGREE = 20


class DegenerateCellError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray      # (nq, dim)
    weights: np.ndarray     # (nq,)
    degree: int
    domain: str

    def __len__(self):
        return len(self.weights)


@lru_cache(maxsize=None)
def make_quadrature(domain, degree):
    """Gauss rule on ``"triangle"`` or ``"interval"`` exact to ``degree``.

    Triangle rules are collapsed (Duffy) tensor products of Gauss-Legendre
    and Gauss-Jacobi(1, 0) rules, so all weights are positive.
    """
    if not 0 <= degree <= MAX_QUADRATURE_DEGREE:
        raise NotImplementedError(f"quadrature degree {degree} not supported "
                                  f"(0..{MAX_QUADRATURE_DEGREE})")
    n = degree // 2 + 1
    z, w = roots_legendre(n)
    if domain == "interval":
        pts = 0.5 * (z + 1.0)
        return QuadratureRule(pts[:, None], 0.5 * w, degree, domain)
    if domain != "triangle":
        raise ValueError(f"unknown domain {domain!r}")
    zj, wj = roots_jacobi(n, 1.0, 0.0)
    t = 0.5 * (z + 1.0)
    s = 0.5 * (zj + 1.0)
    T, S = np.meshgrid(t, s, indexing="ij")
    W = np.outer(0.5 * w, 0.25 * wj)
    pts = np.column_stack([(T * (1.0 - S)).ravel(), S.ravel()])
    return QuadratureRule(pts, W.ravel(), degree, domain)


def _exponents(kind, k):
    if kind == "triangle":
        return [(a, s - a) for s in range(k + 1) for a in range(s, -1, -1)]
    return [(a,) for a in range(k + 1)]


def lagrange_nodes(kind, k):
    if kind == "interval":
        if k == 0:
            return np.array([[0.5]])
        return np.array([0.0, 1.0] + [j / k for j in range(1, k)])[:, None]
    if k == 0:
        return np.array([[1.0 / 3.0, 1.0 / 3.0]])
    return np.array([(i / k, j / k) for j in range(k + 1) for i in range(k + 1 - j)])


class ReferenceBasis:
    """Nodal Lagrange basis of degree ``k`` on the reference cell.

    Interval nodes are ordered endpoints first (t=0, t=1) and then the
    interior nodes, which lets facet spaces share the endpoint values.
    """

    def __init__(self, kind, k):
        if k < 0:
            raise ValueError("polynomial degree must be non-negative")
        if kind not in ("triangle", "interval"):
            raise ValueError(f"unknown basis kind {kind!r}")
        self.kind = kind
        self.degree = k
        self.dim = 2 if kind == "triangle" else 1
        self.exponents = np.array(_exponents(kind, k), dtype=int)
        self.nodes = lagrange_nodes(kind, k)
        V = self._monomials(self.nodes)
        self.coeffs = np.linalg.solve(V, np.eye(len(self.nodes)))

    def __len__(self):
        return len(self.nodes)

    def __repr__(self):
        return f"ReferenceBasis({self.kind!r}, {self.degree})"

    def _monomials(self, x):
        x = np.atleast_2d(x)
        out = np.ones((len(x), len(self.exponents)))
        for d in range(self.dim):
            out *= x[:, d:d + 1] ** self.exponents[:, d]
        return out

    def _monomial_derivative(self, x, d):
        x = np.atleast_2d(x)
        e = self.exponents
        out = np.ones((len(x), len(e)))
        for dd in range(self.dim):
            if dd == d:
                p = np.maximum(e[:, dd] - 1, 0)
                out *= e[:, dd] * x[:, dd:dd + 1] ** p
            else:
                out *= x[:, dd:dd + 1] ** e[:, dd]
        return out

    def values(self, x):
        """Basis values at reference points, shape (nq, n)."""
        return self._monomials(x) @ self.coeffs

    def gradients(self, x):
        """Reference gradients, shape (nq, n, dim)."""
        return np.stack([self._monomial_derivative(x, d) @ self.coeffs
                         for d in range(self.dim)], axis=-1)


@lru_cache(maxsize=None)
def make_basis(kind, k):
    return ReferenceBasis(kind, k)


def push_forward(basis, geometry, rule):
    """Tabulate a cell basis on every cell of ``geometry``.

    Returns ``(values, grads, weights, points)`` with shapes (nq, n),
    (nc, nq, n, 2), (nc, nq) and (nc, nq, 2).  Gradients are mapped with
    the inverse-transpose Jacobian, weights scaled by ``|det J|``.
    """
    if basis.kind != "triangle":
        raise ValueError("push_forward maps triangle bases")
    det = np.asarray(geometry.det)
    scale = np.max(np.abs(geometry.jacobian).reshape(len(det), -1), axis=1)
    if np.any(np.abs(det) <= 1e-14 * scale ** 2):
        bad = int(np.flatnonzero(np.abs(det) <= 1e-14 * scale ** 2)[0])
        raise DegenerateCellError(f"cell {bad} has a singular Jacobian")
    values = basis.values(rule.points)
    ref_grads = basis.gradients(rule.points)
    grads = np.einsum("qnj,cjk->cqnk", ref_grads, geometry.inv)
    weights = np.abs(det)[:, None] * rule.weights[None, :]
    points = geometry.map_points(rule.points)
    return values, grads, weights, points
