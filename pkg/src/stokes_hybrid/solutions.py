"""Analytic test cases, boundary data and error measures.

Every evaluator takes points of shape (n, 2) and returns arrays with the
leading axis ``n``: velocity (n, 2), velocity gradient (n, 2, 2) with
``grad[:, i, j] = d u_i / d x_j``, pressure (n,), forcing (n, 2).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .assembly import _chunks, _edge_data, reference_tables
from .refelem import make_quadrature, push_forward

__all__ = [
    "ExactSolution",
    "ErrorReport",
    "kovasznay",
    "curl_case",
    "l_shape_corner",
    "lid_driven_bc",
    "cavity_case",
    "smooth_case",
    "error_norms",
    "triple_norms",
    "convergence_rates",
    "L_SHAPE_EXPONENT",
]

L_SHAPE_EXPONENT = 0.54448373678246
L_SHAPE_ANGLE = 1.5 * np.pi


@dataclass(frozen=True)
class ExactSolution:
    name: str
    nu: float
    velocity: Callable
    pressure: Optional[Callable] = None
    grad: Optional[Callable] = None
    forcing: Optional[Callable] = None
    boundary: Optional[Callable] = None
    p_mean: float = 0.0
    domain_area: Optional[float] = None

    @property
    def has_exact(self):
        return self.pressure is not None

    def f(self, x):
        if self.forcing is None:
            return np.zeros((len(x), 2))
        return self.forcing(x)

    def g(self, x):
        return (self.boundary or self.velocity)(x)


# ------------------------------------------------------------------ Kovasznay
def kovasznay(nu=1.0 / 40.0):
    """Kovasznay flow on (-0.5, 1) x (-0.5, 1.5) with zero-mean pressure."""
    if nu <= 0:
        raise ValueError("viscosity must be positive")
    lam = 1.0 / (2.0 * nu) - np.sqrt(1.0 / (4.0 * nu * nu) + 4.0 * np.pi ** 2)
    tp = 2.0 * np.pi
    # mean of 0.5 (1 - exp(2 lam x)) over the rectangle; the y-extent cancels
    x0, x1 = -0.5, 1.0
    mean = 0.5 - 0.5 * (np.exp(2 * lam * x1) - np.exp(2 * lam * x0)) / (2 * lam * (x1 - x0))
    C = -mean

    def velocity(x):
        e = np.exp(lam * x[:, 0])
        return np.column_stack([1.0 - e * np.cos(tp * x[:, 1]),
                                lam / tp * e * np.sin(tp * x[:, 1])])

    def grad(x):
        e = np.exp(lam * x[:, 0])
        c, s = np.cos(tp * x[:, 1]), np.sin(tp * x[:, 1])
        out = np.empty((len(x), 2, 2))
        out[:, 0, 0] = -lam * e * c
        out[:, 0, 1] = tp * e * s
        out[:, 1, 0] = lam * lam / tp * e * s
        out[:, 1, 1] = lam * e * c
        return out

    def pressure(x):
        return 0.5 * (1.0 - np.exp(2.0 * lam * x[:, 0])) + C

    def forcing(x):
        e = np.exp(lam * x[:, 0])
        c, s = np.cos(tp * x[:, 1]), np.sin(tp * x[:, 1])
        k2 = lam * lam - tp * tp
        lap = np.column_stack([-k2 * e * c, lam / tp * k2 * e * s])
        dp = np.column_stack([-lam * np.exp(2.0 * lam * x[:, 0]), np.zeros(len(x))])
        return -nu * lap + dp

    sol = ExactSolution("kovasznay", nu, velocity, pressure, grad, forcing, domain_area=3.0)
    object.__setattr__(sol, "lam", lam)
    return sol


# --------------------------------------------------------- pressure robustness
def curl_case(nu=1.0):
    """u = curl(x^2 (x-1)^2 y^2 (y-1)^2), p = x^5 + y^5 - 1/3 on the unit square."""

    def a(t):
        return t * t * (t - 1.0) ** 2

    def a1(t):
        return 2.0 * t * (t - 1.0) * (2.0 * t - 1.0)

    def a2(t):
        return 12.0 * t * t - 12.0 * t + 2.0

    def a3(t):
        return 24.0 * t - 12.0

    def velocity(x):
        X, Y = x[:, 0], x[:, 1]
        return np.column_stack([a(X) * a1(Y), -a1(X) * a(Y)])

    def grad(x):
        X, Y = x[:, 0], x[:, 1]
        out = np.empty((len(x), 2, 2))
        out[:, 0, 0] = a1(X) * a1(Y)
        out[:, 0, 1] = a(X) * a2(Y)
        out[:, 1, 0] = -a2(X) * a(Y)
        out[:, 1, 1] = -a1(X) * a1(Y)
        return out

    def pressure(x):
        return x[:, 0] ** 5 + x[:, 1] ** 5 - 1.0 / 3.0

    def forcing(x):
        X, Y = x[:, 0], x[:, 1]
        lap = np.column_stack([a2(X) * a1(Y) + a(X) * a3(Y),
                               -(a3(X) * a(Y) + a1(X) * a2(Y))])
        dp = np.column_stack([5.0 * X ** 4, 5.0 * Y ** 4])
        return -nu * lap + dp

    return ExactSolution("curl", nu, velocity, pressure, grad, forcing, domain_area=1.0)


# ------------------------------------------------------------ smooth flow
def smooth_case(nu=1.0):
    """Trigonometric flow on the unit square: u = curl(sin(pi x) sin(pi y))."""
    pi = np.pi

    def velocity(x):
        X, Y = pi * x[:, 0], pi * x[:, 1]
        return pi * np.column_stack([np.sin(X) * np.cos(Y), -np.cos(X) * np.sin(Y)])

    def grad(x):
        X, Y = pi * x[:, 0], pi * x[:, 1]
        out = np.empty((len(x), 2, 2))
        out[:, 0, 0] = pi * pi * np.cos(X) * np.cos(Y)
        out[:, 0, 1] = -pi * pi * np.sin(X) * np.sin(Y)
        out[:, 1, 0] = pi * pi * np.sin(X) * np.sin(Y)
        out[:, 1, 1] = -pi * pi * np.cos(X) * np.cos(Y)
        return out

    def pressure(x):
        return np.sin(pi * x[:, 0]) * np.sin(pi * x[:, 1]) - 4.0 / pi ** 2

    def forcing(x):
        X, Y = pi * x[:, 0], pi * x[:, 1]
        # the velocity is an eigenfunction of the Laplacian with eigenvalue -2 pi^2
        lap = -2.0 * pi * pi * velocity(x)
        dp = pi * np.column_stack([np.cos(X) * np.sin(Y), np.sin(X) * np.cos(Y)])
        return -nu * lap + dp

    return ExactSolution("smooth", nu, velocity, pressure, grad, forcing, domain_area=1.0)


# ----------------------------------------------------------- L-shaped corner
def _psi_derivatives(phi, lam=L_SHAPE_EXPONENT, omega=L_SHAPE_ANGLE):
    """psi and its first four derivatives in the angle."""
    cw = np.cos(lam * omega)
    a, b = 1.0 + lam, 1.0 - lam
    sa, ca = np.sin(a * phi), np.cos(a * phi)
    sb, cb = np.sin(b * phi), np.cos(b * phi)
    d0 = sa * cw / a - ca - sb * cw / b + cb
    d1 = ca * cw + a * sa - cb * cw - b * sb
    d2 = -a * sa * cw + a * a * ca + b * sb * cw - b * b * cb
    d3 = -a * a * ca * cw - a ** 3 * sa + b * b * cb * cw + b ** 3 * sb
    d4 = a ** 3 * sa * cw - a ** 4 * ca - b ** 3 * sb * cw + b ** 4 * cb
    return d0, d1, d2, d3, d4


def _corner_local(x, lam):
    """Local polar frame: the domain is the sector 0 <= phi <= 3 pi / 2 of -x."""
    xl = -x
    r = np.hypot(xl[:, 0], xl[:, 1])
    phi = np.mod(np.arctan2(xl[:, 1], xl[:, 0]), 2.0 * np.pi)
    return xl, r, phi


def l_shape_corner(lam=L_SHAPE_EXPONENT):
    """Singular corner flow on (-1, 1)^2 minus [-1, 0] x [0, 1]; nu = 1, f = 0.

    The classical solution is written for the sector ``0 <= phi <= 3 pi/2``;
    it is rotated by pi so the walls meeting at the origin are the segments
    towards (0, 1) and (-1, 0).
    """

    def velocity(x):
        _, r, phi = _corner_local(x, lam)
        p0, p1, *_ = _psi_derivatives(phi, lam)
        rl = np.where(r > 0, r, 1.0) ** lam
        ux = rl * ((1 + lam) * np.sin(phi) * p0 + np.cos(phi) * p1)
        uy = rl * (-(1 + lam) * np.cos(phi) * p0 + np.sin(phi) * p1)
        out = -np.column_stack([ux, uy])
        out[r == 0] = 0.0
        return out

    def pressure(x):
        _, r, phi = _corner_local(x, lam)
        if np.any(r < 1e-14):
            raise ValueError("corner-flow pressure is singular at the re-entrant corner")
        _, p1, _, p3, _ = _psi_derivatives(phi, lam)
        return -r ** (lam - 1) * ((1 + lam) ** 2 * p1 + p3) / (1 - lam)

    def grad(x):
        xl, r, phi = _corner_local(x, lam)
        p0, p1, p2, *_ = _psi_derivatives(phi, lam)
        s, c = np.sin(phi), np.cos(phi)
        a = 1 + lam
        rl = r ** (lam - 1)
        # polar derivatives of the local components
        ux_r = lam * rl * (a * s * p0 + c * p1)
        ux_f = r ** lam * (a * c * p0 + a * s * p1 - s * p1 + c * p2)
        uy_r = lam * rl * (-a * c * p0 + s * p1)
        uy_f = r ** lam * (a * s * p0 - a * c * p1 + c * p1 + s * p2)
        out = np.empty((len(x), 2, 2))
        for i, (dr, df) in enumerate([(ux_r, ux_f), (uy_r, uy_f)]):
            dxl = c * dr - s / r * df
            dyl = s * dr + c / r * df
            # u = -u_local(-x): the two sign flips cancel in the gradient
            out[:, i, 0] = dxl
            out[:, i, 1] = dyl
        return out

    # mean pressure: integrate r^(lam-1) g(phi) over the L-shape in polar form
    def _radius(phi):
        # distance from the corner to the outer boundary along angle phi (local frame)
        c, s = np.cos(phi), np.sin(phi)
        with np.errstate(divide="ignore"):
            tx = np.where(np.abs(c) > 1e-15, 1.0 / np.abs(c), np.inf)
            ty = np.where(np.abs(s) > 1e-15, 1.0 / np.abs(s), np.inf)
        return np.minimum(tx, ty)

    def _integrand(phi):
        _, p1, _, p3, _ = _psi_derivatives(np.array([phi]), lam)
        g = -((1 + lam) ** 2 * p1 + p3) / (1 - lam)
        R = _radius(np.array([phi]))
        return float(g[0] * R[0] ** (lam + 1) / (lam + 1))

    breaks = [0.25 * np.pi, 0.5 * np.pi, 0.75 * np.pi, np.pi, 1.25 * np.pi]
    total = 0.0
    edges = [0.0] + breaks + [L_SHAPE_ANGLE]
    for lo, hi in zip(edges[:-1], edges[1:]):
        total += integrate.quad(_integrand, lo, hi, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
    p_mean = total / 3.0

    sol = ExactSolution("lshape", 1.0, velocity, pressure, grad, None,
                        p_mean=p_mean, domain_area=3.0)
    object.__setattr__(sol, "lam", lam)
    return sol


# ------------------------------------------------------------- lid cavity
def lid_driven_bc(x):
    """Lid velocity (1 - x^4, 0) on y = 1 of [-1, 1]^2, zero elsewhere."""
    x = np.asarray(x, dtype=float)
    out = np.zeros((len(x), 2))
    top = np.abs(x[:, 1] - 1.0) < 1e-12
    out[top, 0] = 1.0 - x[top, 0] ** 4
    return out


def cavity_case(nu=1.0):
    return ExactSolution("cavity", nu, lid_driven_bc, boundary=lid_driven_bc, domain_area=4.0)


# ---------------------------------------------------------------- errors
@dataclass
class ErrorReport:
    err_u: float = np.nan
    err_p: float = np.nan
    div_norm: float = np.nan
    jump_norm: float = np.nan
    err_u_triple: float = np.nan
    err_u_triple_prime: float = np.nan
    err_p_triple: float = np.nan
    u_h1: float = np.nan
    uh_h1: float = np.nan
    dofs: int = 0
    h_max: float = np.nan
    times: dict = field(default_factory=dict)


def _cell_fields(dofmap, u, p):
    nc = dofmap.mesh.num_cells
    return u.reshape(nc, 2, -1), p[dofmap.cell_p]


def error_norms(mesh, dofmap, solution, exact=None, alpha=None, quad_degree=None):
    """L2 errors, divergence, facet normal jumps and triple-norm errors.

    ``solution`` needs ``u``, ``ubar``, ``p``, ``pbar`` in full numbering.
    The jump seminorm is ``sqrt(sum over interior facets of int [u.n]^2)``.
    """
    from .assembly import penalty_parameter

    k = dofmap.k
    if alpha is None:
        alpha = penalty_parameter(k, dofmap.variant)
    tab = reference_tables(k)
    qd = quad_degree if quad_degree is not None else 2 * k + 4
    rule = make_quadrature("triangle", qd)
    erule = make_quadrature("interval", qd)
    etab = reference_tables(k, edge_degree=qd)
    geom = mesh.geometry()
    U, P = _cell_fields(dofmap, solution.u, solution.p)
    ubar, pbar = solution.ubar, solution.pbar
    has_exact = exact is not None and exact.has_exact

    eu = ep = div = h1 = h1h = tv = tvp = tp = 0.0
    for idx in _chunks(mesh.num_cells):
        gc = geom.subset(idx)
        vals, G, W, X = push_forward(tab.vel, gc, rule)
        pv = tab.pre.values(rule.points)
        uh = np.einsum("qi,cdi->cqd", vals, U[idx])
        guh = np.einsum("cqik,cdi->cqdk", G, U[idx])             # d u_d / d x_k
        ph = np.einsum("qi,ci->cq", pv, P[idx])
        div += np.sum(W * (guh[..., 0, 0] + guh[..., 1, 1]) ** 2)
        h1h += np.sum(W[..., None, None] * guh ** 2) + np.sum(W[..., None] * uh ** 2)
        if not has_exact:
            continue
        Xf = X.reshape(-1, 2)
        ue = exact.velocity(Xf).reshape(uh.shape)
        ge = exact.grad(Xf).reshape(guh.shape)
        pe = exact.pressure(Xf).reshape(ph.shape) - exact.p_mean
        eu += np.sum(W[..., None] * (ue - uh) ** 2)
        ep += np.sum(W * (pe - ph) ** 2)
        h1 += np.sum(W[..., None, None] * ge ** 2) + np.sum(W[..., None] * ue ** 2)
        tv += np.sum(W[..., None, None] * (ge - guh) ** 2)
        # boundary terms of the triple norms, facet values from the exact solution
        sign = mesh.cell_facet_sign[idx]
        ub = ubar[dofmap.cell_ubar[idx]].reshape(len(idx), 3, k + 1, 2)
        pb = pbar[dofmap.cell_pbar[idx]].reshape(len(idx), 3, k + 1)
        for e in range(3):
            nq = len(etab.edge.weights)
            phi = etab.edge_vals[e]
            psi = np.where((sign[:, e] > 0)[:, None, None], etab.fac_vals[0][None],
                           etab.fac_vals[1][None])
            grads = np.einsum("qnj,cjk->cqnk", etab.edge_grads[e], gc.inv)
            we = gc.edge_length[:, e][:, None] * etab.edge.weights[None, :]
            xe = gc.map_points(etab.edge_points[e]).reshape(-1, 2)
            ue_e = exact.velocity(xe).reshape(len(idx), nq, 2)
            ge_e = exact.grad(xe).reshape(len(idx), nq, 2, 2)
            pe_e = exact.pressure(xe).reshape(len(idx), nq) - exact.p_mean
            uh_e = np.einsum("qi,cdi->cqd", phi, U[idx])
            gh_e = np.einsum("cqik,cdi->cqdk", grads, U[idx])
            ubh_e = np.einsum("cqa,cad->cqd", psi, ub[:, e])
            pbh_e = np.einsum("cqa,ca->cq", psi, pb[:, e])
            n = gc.normals[:, e]
            # error field (v, vbar) = (u - u_h, u - ubar_h): vbar - v = u_h - ubar_h
            tv += np.sum((alpha / gc.h)[:, None] * we * np.sum((uh_e - ubh_e) ** 2, axis=-1))
            dn = np.einsum("cqdk,ck->cqd", ge_e - gh_e, n)
            tvp += np.sum((gc.h / alpha)[:, None] * we * np.sum(dn ** 2, axis=-1))
            tp += np.sum(gc.h[:, None] * we * (pe_e - pbh_e) ** 2)
    jump = _normal_jump(mesh, dofmap, solution.u, erule, tab)
    rep = ErrorReport(div_norm=np.sqrt(div), jump_norm=jump, dofs=dofmap.n_condensed,
                      h_max=float(geom.diameter.max()), uh_h1=float(np.sqrt(h1h)))
    if has_exact:
        rep.err_u, rep.err_p, rep.u_h1 = np.sqrt(eu), np.sqrt(ep), np.sqrt(h1)
        rep.err_u_triple = np.sqrt(tv)
        rep.err_u_triple_prime = np.sqrt(tv + tvp)
        rep.err_p_triple = np.sqrt(ep + tp)
    return rep


def _normal_jump(mesh, dofmap, u, rule, tab):
    """sqrt of the sum over interior facets of the squared normal-velocity jump."""
    k = dofmap.k
    interior = mesh.interior_facets
    if len(interior) == 0:
        return 0.0
    vel = tab.vel
    U = u.reshape(mesh.num_cells, 2, -1)
    s = rule.points[:, 0]
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    n = mesh.facet_normals()[interior]
    L = mesh.facet_lengths()[interior]
    traces = []
    for side in range(2):
        c = mesh.facet_cells[interior, side]
        e = mesh.facet_local[interior, side]
        sign = mesh.cell_facet_sign[c, e]
        vals = np.zeros((len(interior), len(s), 2))
        for le in range(3):
            m = e == le
            if not np.any(m):
                continue
            a, b = verts[(le + 1) % 3], verts[(le + 2) % 3]
            # evaluate at facet parameter t (global orientation)
            for orient in (1, -1):
                mm = m & (sign == orient)
                if not np.any(mm):
                    continue
                t = s if orient > 0 else 1.0 - s
                pts = a[None, :] + t[:, None] * (b - a)[None, :]
                phi = vel.values(pts)
                vals[mm] = np.einsum("qi,cdi->cqd", phi, U[c[mm]])
        traces.append(np.einsum("cqd,cd->cq", vals, n))
    jump = traces[0] - traces[1]
    total = np.sum(L[:, None] * rule.weights[None, :] * jump ** 2)
    return float(np.sqrt(total))


def triple_norms(mesh, dofmap, u, ubar, p=None, pbar=None, alpha=None, matrices=None):
    """Discrete norms ``(|||v|||_v, |||v|||_v', |||q|||_p)`` of finite element fields."""
    from .assembly import assemble_norm_matrices, penalty_parameter

    if alpha is None:
        alpha = penalty_parameter(dofmap.k, dofmap.variant)
    Nv, Nvp, Np = matrices or assemble_norm_matrices(mesh, dofmap, alpha)
    v = np.concatenate([u, ubar])
    nv = float(np.sqrt(max(v @ (Nv @ v), 0.0)))
    nvp = float(np.sqrt(max(v @ (Nvp @ v), 0.0)))
    nq = np.nan
    if p is not None and pbar is not None:
        q = np.concatenate([p, pbar])
        nq = float(np.sqrt(max(q @ (Np @ q), 0.0)))
    return nv, nvp, nq


def convergence_rates(errors, h=None):
    """Rates between consecutive levels: log2(e_coarse / e_fine) for halved h."""
    errors = np.asarray(errors, dtype=float)
    if h is None:
        ratio = np.full(len(errors) - 1, 2.0)
    else:
        h = np.asarray(h, dtype=float)
        ratio = h[:-1] / h[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(errors[:-1] / errors[1:]) / np.log(ratio)
