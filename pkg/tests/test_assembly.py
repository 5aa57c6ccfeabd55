import numpy as np
import pytest
import scipy.linalg
import sympy as sy
from hypothesis import given, strategies as st

from stokes_hybrid.assembly import (assemble_global, assemble_local, assemble_local_a,
                                    assemble_local_b, penalty_parameter, reference_tables)
from stokes_hybrid.condense import SingularCellError, condense
from stokes_hybrid.mesh import Mesh, generate_rectangle
from stokes_hybrid.refelem import make_basis, make_quadrature
from stokes_hybrid.solutions import error_norms
from stokes_hybrid.solver import solve_stokes
from stokes_hybrid.spaces import build_dofmap

from conftest import VARIANTS, skewed_mesh


@pytest.mark.parametrize("k,variant,alpha", [(1, "HDG", 6), (2, "EDG", 16), (3, "EDG_HDG", 36),
                                             (2, "HDG", 24)])
def test_penalty_parameter(k, variant, alpha):
    assert penalty_parameter(k, variant) == alpha


def test_penalty_parameter_rejects_k0():
    with pytest.raises(ValueError):
        penalty_parameter(0, "HDG")


def _local(mesh, k, nu=1.0, alpha=None, variant="HDG"):
    alpha = penalty_parameter(k, variant) if alpha is None else alpha
    tab = reference_tables(k)
    return assemble_local(mesh.geometry(), mesh.cell_facet_sign, tab, nu, alpha), tab


def _cell_facet_matrix(lb, c):
    """Local matrix of a_h on one cell, unknowns (u, ubar)."""
    return np.block([[lb.A_uu[c], lb.A_bu[c].T], [lb.A_bu[c], lb.A_bb[c]]])


def _constant_modes(nk, k):
    modes = []
    for d in range(2):
        u = np.zeros(2 * nk)
        u[d * nk:(d + 1) * nk] = 1.0
        ub = np.zeros((3 * (k + 1), 2))
        ub[:, d] = 1.0
        modes.append(np.concatenate([u, ub.ravel()]))
    return np.array(modes).T


@pytest.mark.parametrize("k", [1, 2, 3])
def test_constants_in_kernel(k):
    lb, tab = _local(skewed_mesh(2, 2, seed=4), k)
    Z = _constant_modes(tab.nk, k)
    for c in range(len(lb.A_uu)):
        M = _cell_facet_matrix(lb, c)
        assert np.abs(M @ Z).max() < 1e-11 * np.abs(M).max()


@pytest.mark.parametrize("k", [1, 2, 3])
def test_local_form_hdg_positive(k, rng):
    """With the HDG penalty each single-cell form is positive modulo constants."""
    lb, tab = _local(skewed_mesh(3, 3, seed=5), k, variant="HDG")
    Z = _constant_modes(tab.nk, k)
    Q = scipy.linalg.null_space(Z.T)
    for c in range(len(lb.A_uu)):
        M = _cell_facet_matrix(lb, c)
        np.testing.assert_allclose(M, M.T, atol=1e-12 * np.abs(M).max())
        assert np.linalg.eigvalsh(Q.T @ M @ Q).min() > 0
        v = Q @ rng.standard_normal((Q.shape[1], 100))
        assert np.all(np.einsum("ij,ik,kj->j", v, M, v) > 0)


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("k", [1, 2, 3])
def test_coercivity_random_fields(variant, k, rng):
    """a_h(v, v) > 0 for random fields with the boundary facet modes removed."""
    m = skewed_mesh(3, 3, seed=5)
    dm = build_dofmap(m, k, variant)
    s = assemble_global(m, dm, 1.0)
    Bu = s.B()[:dm.n_ubar].toarray()
    A = np.block([[s.Auu().toarray(), Bu.T], [Bu, s.C()[:dm.n_ubar, :dm.n_ubar].toarray()]])
    free = np.concatenate([np.arange(dm.n_u), dm.n_u + np.flatnonzero(~dm.constrained)])
    A = A[np.ix_(free, free)]
    v = rng.standard_normal((len(free), 100))
    assert np.all(np.einsum("ij,ik,kj->j", v, A, v) > 0)
    assert np.linalg.eigvalsh(A).min() > 0


def test_nu_scaling():
    m = skewed_mesh(2, 2)
    a, _ = _local(m, 2, nu=1.0)
    b, _ = _local(m, 2, nu=2.0)
    for x, y in ((a.A_uu, b.A_uu), (a.A_bu, b.A_bu), (a.A_bb, b.A_bb)):
        np.testing.assert_allclose(y, 2 * x, rtol=1e-14, atol=1e-14)
    np.testing.assert_array_equal(a.B_pu, b.B_pu)


def test_reference_divergence_row():
    """k=1 on the unit triangle: B_pu = -(int div phi) by symbolic integration."""
    x, y = sy.symbols("x y")
    hats = [1 - x - y, x, y]
    divs = [sy.diff(h, x) for h in hats] + [sy.diff(h, y) for h in hats]
    expect = [-float(sy.integrate(sy.integrate(d, (y, 0, 1 - x)), (x, 0, 1))) for d in divs]
    m = Mesh(np.array([[0, 0], [1, 0], [0, 1]], float), np.array([[0, 1, 2]]))
    tab = reference_tables(1)
    Bp, _ = assemble_local_b(m.geometry(), m.cell_facet_sign, tab)
    np.testing.assert_allclose(Bp[0, 0], expect, atol=1e-15)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_b_matches_overintegration(k):
    m = skewed_mesh(2, 2, seed=7)
    g = m.geometry()
    tab = reference_tables(k)
    Bp, Bq = assemble_local_b(g, m.cell_facet_sign, tab)
    # independent evaluation with a degree 2k+6 rule
    vel, pre, fac = make_basis("triangle", k), make_basis("triangle", k - 1), make_basis("interval", k)
    vol = make_quadrature("triangle", 2 * k + 6)
    edge = make_quadrature("interval", 2 * k + 6)
    nk = len(vel)
    ref_verts = np.array([[0, 0], [1, 0], [0, 1]], float)
    for c in range(m.num_cells):
        J, inv = g.jacobian[c], g.inv[c]
        G = vel.gradients(vol.points) @ inv                   # (nq, nk, 2)
        w = vol.weights * abs(g.det[c])
        chi = pre.values(vol.points)
        ref = np.zeros((len(pre), 2 * nk))
        for d in range(2):
            ref[:, d * nk:(d + 1) * nk] = -np.einsum("q,qi,qj->ij", w, chi, G[:, :, d])
        np.testing.assert_allclose(Bp[c], ref, atol=1e-12 * max(1, np.abs(ref).max()))
        refq = np.zeros((3, k + 1, 2 * nk))
        for e in range(3):
            a, b = ref_verts[(e + 1) % 3], ref_verts[(e + 2) % 3]
            s = edge.points[:, 0]
            pts = a + s[:, None] * (b - a)
            phi = vel.values(pts)
            # facet basis runs from the facet's lower global vertex
            t = s if m.cell_facet_sign[c, e] > 0 else 1 - s
            psi = fac.values(t[:, None])
            L = g.edge_length[c, e]
            n = g.normals[c, e]
            for d in range(2):
                refq[e, :, d * nk:(d + 1) * nk] = L * np.einsum("q,qa,qj->aj", edge.weights, psi,
                                                                phi) * n[d]
        np.testing.assert_allclose(Bq[c], refq.reshape(3 * (k + 1), -1), atol=1e-12)


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("k", [1, 2])
def test_full_operator_symmetric(variant, k):
    m = skewed_mesh(3, 3, seed=8)
    dm = build_dofmap(m, k, variant)
    M = assemble_global(m, dm, 0.7).full_matrix()
    assert abs(M - M.T).max() <= 1e-12 * abs(M).max()


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("k", [1, 2, 3])
def test_constant_pressure_nullspace(variant, k):
    m = skewed_mesh(3, 2, seed=9)
    dm = build_dofmap(m, k, variant)
    s = assemble_global(m, dm, 1.0)
    B = s.B()
    ones = np.zeros(B.shape[0])
    ones[dm.n_ubar:] = 1.0
    r = B.T @ ones
    assert np.abs(r).max() <= 1e-12 * abs(B).max()


@pytest.mark.parametrize("k", [1, 2])
def test_cell_blocks_variant_independent(k):
    m = skewed_mesh(2, 3, seed=10)
    blocks = [assemble_global(m, build_dofmap(m, k, v), 1.0, alpha=10.0) for v in VARIANTS]
    for s in blocks[1:]:
        np.testing.assert_array_equal(s.A_uu, blocks[0].A_uu)
        np.testing.assert_array_equal(s.B_pu, blocks[0].B_pu)


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("k", [1, 2, 3])
def test_coercivity_proxy_two_cells(variant, k, two_cells):
    dm = build_dofmap(two_cells, k, variant)
    s = assemble_global(two_cells, dm, 1.0)
    A = np.block([[s.Auu().toarray(), s.B()[:dm.n_ubar].T.toarray()],
                  [s.B()[:dm.n_ubar].toarray(), s.C()[:dm.n_ubar, :dm.n_ubar].toarray()]])
    free = np.concatenate([np.arange(dm.n_u), dm.n_u + np.flatnonzero(~dm.constrained)])
    assert np.linalg.eigvalsh(A[np.ix_(free, free)]).min() > 0


def test_too_small_penalty_detected():
    m = skewed_mesh(2, 2)
    dm = build_dofmap(m, 2, "HDG")
    with pytest.raises(SingularCellError) as err:
        condense(assemble_global(m, dm, 1.0, alpha=0.5))
    assert "alpha=0.5" in str(err.value)


def test_lifting_identity_rows():
    m = generate_rectangle(0, 0, 1, 1, 2, 2)
    dm = build_dofmap(m, 1, "HDG")
    g = lambda x: np.stack([x[:, 1], -x[:, 0]], axis=1)
    s = assemble_global(m, dm, 1.0, g_boundary=g)
    M = s.full_matrix().tocsr()
    rhs = s.full_rhs()
    rows = dm.n_u + np.flatnonzero(dm.constrained)
    for r in rows[:10]:
        row = M.getrow(r)
        assert np.count_nonzero(row.toarray()) == 1 and row[0, r] == 1.0
    np.testing.assert_allclose(rhs[rows], s.g[dm.constrained])


@pytest.mark.parametrize("variant", VARIANTS)
def test_zero_data_gives_zero(variant):
    m = skewed_mesh(3, 3)
    sol = solve_stokes(m, 2, variant, solver="direct")
    for v in (sol.u, sol.ubar, sol.p, sol.pbar):
        assert np.abs(v).max() < 1e-14


def _patch(m, k, variant, velocity, grad, pressure, forcing):
    from stokes_hybrid.solutions import ExactSolution

    ex = ExactSolution("patch", 1.0, velocity, pressure, grad, forcing, velocity)
    sol = solve_stokes(m, k, variant, nu=1.0, f=ex.f, g=ex.g, solver="direct")
    return error_norms(m, sol.dofmap, sol, ex)


@pytest.mark.parametrize("variant", VARIANTS)
def test_patch_linear(variant):
    m = skewed_mesh(4, 4, seed=11)
    vel = lambda x: np.stack([x[:, 0] + 2 * x[:, 1], 3 * x[:, 0] - x[:, 1]], axis=1)
    grad = lambda x: np.broadcast_to(np.array([[1.0, 2.0], [3.0, -1.0]]), (len(x), 2, 2))
    rep = _patch(m, 1, variant, vel, grad, lambda x: np.zeros(len(x)),
                 lambda x: np.zeros((len(x), 2)))
    assert rep.err_u < 1e-10
    assert rep.err_p < 1e-10


@pytest.mark.parametrize("variant", VARIANTS)
def test_patch_quadratic(variant):
    m = skewed_mesh(4, 4, seed=12)
    vel = lambda x: np.stack([x[:, 0] ** 2, -2 * x[:, 0] * x[:, 1]], axis=1)

    def grad(x):
        out = np.zeros((len(x), 2, 2))
        out[:, 0, 0] = 2 * x[:, 0]
        out[:, 1, 0] = -2 * x[:, 1]
        out[:, 1, 1] = -2 * x[:, 0]
        return out

    pressure = lambda x: x[:, 0] - 0.5 + 2 * (x[:, 1] - 0.5)
    # -lap u + grad p
    forcing = lambda x: np.tile([-2.0 + 1.0, 0.0 + 2.0], (len(x), 1))
    rep = _patch(m, 2, variant, vel, grad, pressure, forcing)
    assert rep.err_u < 1e-10
    assert rep.err_p < 1e-9
