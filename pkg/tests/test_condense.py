import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from stokes_hybrid.assembly import assemble_global
from stokes_hybrid.condense import back_substitute, condense, export_matrix_market
from stokes_hybrid.diagnostics import DENSE_CAP, DENSE_RTOL, dense_solve, relative_error
from stokes_hybrid.krylov import load_matrix_market
from stokes_hybrid.mesh import generate_rectangle
from stokes_hybrid.spaces import build_dofmap

from conftest import VARIANTS, skewed_mesh


def _data(seed):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(8)
    f = lambda x: np.stack([c[0] + c[1] * np.sin(3 * x[:, 0]) + c[2] * x[:, 1] ** 2,
                            c[3] * np.cos(2 * x[:, 1]) + c[4] * x[:, 0]], axis=1)
    g = lambda x: np.stack([c[5] * x[:, 1] * (1 - x[:, 1]) + c[6] * x[:, 0],
                            c[7] * np.sin(x[:, 0]) - c[6] * x[:, 1]], axis=1)
    return f, g


def _both_paths(mesh, k, variant, nu, f, g):
    dm = build_dofmap(mesh, k, variant)
    s = assemble_global(mesh, dm, nu, f=f, g_boundary=g)
    full = dense_solve(s)
    cs = condense(s)
    U = dense_solve(cs)
    u = back_substitute(cs, U)
    ub = s.g.copy()
    ub[~dm.constrained] = U[:dm.n_ubar_free]
    x = np.concatenate([u, ub, U[dm.n_ubar_free:]])
    return dm, s, cs, full, x


def test_stretched_cells_need_larger_penalty():
    """A far too small penalty is refused with the offending cell named."""
    from stokes_hybrid.condense import SingularCellError

    m = generate_rectangle(0, 0, 1, 1, 1, 8)
    dm = build_dofmap(m, 1, "EDG")
    with pytest.raises(SingularCellError) as err:
        condense(assemble_global(m, dm, 1.0, alpha=1.0))
    assert err.value.cell >= 0
    condense(assemble_global(m, dm, 1.0))


def test_two_cell_dimension(two_cells):
    cs = condense(assemble_global(two_cells, build_dofmap(two_cells, 1, "HDG"), 1.0))
    assert cs.shape == (16, 16)


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("k", [1, 2])
def test_matches_dense_full_solve(variant, k):
    m = generate_rectangle(0, 0, 1, 1, 2, 2) if k == 2 else skewed_mesh(3, 3)
    f, g = _data(1)
    dm, s, cs, full, x = _both_paths(m, k, variant, 1.0, f, g)
    assert dm.n_full <= DENSE_CAP
    assert relative_error(x, full) < 1e-10
    # residual of the full block system
    M, b = s.full_matrix(), s.full_rhs()
    assert np.linalg.norm(M @ x - b) <= 1e-10 * np.linalg.norm(b)


@given(nx=st.integers(1, 5), ny=st.integers(1, 5), k=st.integers(1, 2),
       variant=st.sampled_from(VARIANTS), seed=st.integers(0, 10 ** 6),
       nu=st.floats(0.01, 10.0), jitter=st.floats(0.0, 0.3))
def test_condensation_exact(nx, ny, k, variant, seed, nu, jitter):
    m = skewed_mesh(nx, ny, seed=seed, amount=jitter)
    dm = build_dofmap(m, k, variant)
    assume(dm.n_full <= DENSE_CAP)
    f, g = _data(seed)
    _, _, _, full, x = _both_paths(m, k, variant, nu, f, g)
    assert relative_error(x, full) <= DENSE_RTOL


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("k", [1, 2, 3])
def test_symmetry_and_nullspace(variant, k):
    m = skewed_mesh(3, 3, seed=3)
    dm = build_dofmap(m, k, variant)
    cs = condense(assemble_global(m, dm, 1.0))
    S = cs.S
    assert abs(S - S.T).max() <= 1e-12 * abs(S).max()
    z = dm.pressure_nullspace()
    assert np.abs(S @ z).max() <= 1e-12 * abs(S).max()
    # block layout of the condensed operator
    blocks = cs.blocks()
    assert [b.shape[0] for b in blocks[0]] == [dm.n_ubar_free] * 3
    assert abs(blocks[1][1]).max() > 0


def test_first_block_formula():
    m = skewed_mesh(2, 2, seed=4)
    dm = build_dofmap(m, 2, "EDG_HDG")
    s = assemble_global(m, dm, 1.0)
    cs = condense(s)
    free = np.flatnonzero(~dm.constrained)
    Auu = s.Auu().toarray()
    Abu = s.B()[:dm.n_ubar].toarray()[free]
    Abb = s.C()[:dm.n_ubar, :dm.n_ubar].toarray()[np.ix_(free, free)]
    expect = Abb - Abu @ np.linalg.solve(Auu, Abu.T)
    got = cs.blocks()[0][0].toarray()
    np.testing.assert_allclose(got, expect, atol=1e-11 * np.abs(expect).max())


def test_zero_state_back_substitution():
    m = skewed_mesh(2, 2)
    dm = build_dofmap(m, 1, "HDG")
    cs = condense(assemble_global(m, dm, 1.0))
    np.testing.assert_array_equal(back_substitute(cs, np.zeros(dm.n_condensed)), 0.0)
    with pytest.raises(ValueError):
        back_substitute(cs, np.zeros(dm.n_condensed + 1))


def test_polynomial_case_recovery():
    m = skewed_mesh(2, 3, seed=6)
    vel = lambda x: np.stack([x[:, 0] ** 2, -2 * x[:, 0] * x[:, 1]], axis=1)
    f = lambda x: np.tile([-1.0, 2.0], (len(x), 1))
    dm, s, cs, full, x = _both_paths(m, 2, "HDG", 1.0, f, vel)
    n = dm.n_u
    assert relative_error(x[:n], full[:n]) < 1e-10


def test_matrix_market_round_trip(tmp_path):
    m = skewed_mesh(2, 2)
    dm = build_dofmap(m, 1, "EDG")
    f, g = _data(2)
    cs = condense(assemble_global(m, dm, 1.0, f=f, g_boundary=g))
    export_matrix_market(cs, tmp_path / "S.mtx", tmp_path / "b.mtx")
    A, b = load_matrix_market(tmp_path / "S.mtx", tmp_path / "b.mtx")
    assert abs(A - cs.S).max() < 1e-14 * abs(cs.S).max()
    np.testing.assert_allclose(b, cs.rhs, rtol=1e-15)
