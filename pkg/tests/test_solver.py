import numpy as np
import pytest
from scipy.linalg import null_space

from dnslab.experiments import random_smooth_form
from dnslab.forms import FormField, dbar
from dnslab.geometry import make_ball
from dnslab.solver import (SolverError, adjoint_op, box_op, boundary_identity_check, canonical_solve,
                           dbar_op, form_to_vector, get_complex, hodge_decompose, kappa_defect,
                           neumann_solve, vector_to_form)


@pytest.fixture(scope="module")
def disk():
    return make_ball(1, 1.0, 1 / 8)


@pytest.fixture(scope="module")
def ball2():
    return make_ball(2, 1.0, 0.2)


def _rand(rng, size):
    return rng.standard_normal(size) + 1j * rng.standard_normal(size)


def test_dbar_op_shapes(disk, ball2):
    from dnslab.sobolev import set_nodes
    A = dbar_op(disk, 0)
    assert A.shape == (set_nodes(disk, 1).size, set_nodes(disk, 0).size)
    B = dbar_op(ball2, 1)
    assert B.shape == (set_nodes(ball2, 2).size, 2 * set_nodes(ball2, 1).size)
    with pytest.raises(ValueError):
        dbar_op(disk, 1)


def test_dbar_op_matches_forms(disk):
    f = FormField.from_functions(disk, 0, lambda X: X[0] - 1j * X[1])
    v = dbar_op(disk, 0) @ form_to_vector(f)
    assert np.array_equal(v, form_to_vector(dbar(f), 1))


def test_dbar_op_squared_vanishes(ball2):
    P = dbar_op(ball2, 1).matrix @ dbar_op(ball2, 0).matrix
    P.eliminate_zeros()
    assert P.nnz == 0


def test_s0_adjoint_is_weighted_transpose(disk):
    cx = get_complex(disk, 0)
    A = cx.A(0).toarray()
    W0, W1 = cx.M(0).diagonal(), cx.M(1).diagonal()
    ref = (A.conj().T * W1[None, :]) / W0[:, None]
    rng = np.random.default_rng(0)
    y = _rand(rng, A.shape[0])
    assert np.allclose(cx.adjoint(0) @ y, ref @ y, rtol=1e-12, atol=0)


@pytest.mark.parametrize("s", [0, 1, 2])
def test_adjointness_and_involution(disk, s):
    cx = get_complex(disk, s)
    adj = adjoint_op(cx.A(0), cx.M(0), cx.M(1))
    rng = np.random.default_rng(s)
    for _ in range(5):
        x, y = _rand(rng, cx.size(0)), _rand(rng, cx.size(1))
        lhs, rhs = cx.inner(1, cx.A(0) @ x, y), cx.inner(0, x, adj @ y)
        assert abs(lhs - rhs) <= 1e-10 * cx.norm(1, cx.A(0) @ x) * cx.norm(1, y)
        Ax = cx.A(0) @ x
        assert np.linalg.norm(adj.adjoint_apply(x) - Ax) <= 1e-10 * np.linalg.norm(Ax)


@pytest.mark.parametrize("s", [0, 1])
def test_box_quadratic_form(disk, s):
    cx = get_complex(disk, s)
    B = box_op(disk, 1, s)
    u = _rand(np.random.default_rng(10 + s), cx.size(1))
    val = B.hermitian_form(u, u)
    expected = cx.norm(0, cx.adjoint(0) @ u) ** 2
    assert abs(val - expected) <= 1e-10 * abs(expected)
    with pytest.raises(ValueError):
        box_op(disk, 0, s)


def _bump(X):
    t = (X**2).sum(axis=0)
    g = np.where(t < 0.25, (1 - 4 * t) ** 4, 0.0)
    lap = np.where(t < 0.25, 4 * (-16 * (1 - 4 * t) ** 3) + 4 * t * 192 * (1 - 4 * t) ** 2, 0.0)
    return g, lap


def test_box_is_quarter_laplacian_inside():
    errs = []
    for h in (1 / 8, 1 / 16, 1 / 32):
        g = make_ball(1, 1.0, h)
        u, lap = _bump(g.coords)
        psi = FormField(1, {(1,): u.astype(complex)}, g, np.ones(g.shape, bool))
        bu = vector_to_form(box_op(g, 1, 0) @ form_to_vector(psi), g, 1)
        m = bu.mask & (g.rho < -0.25)
        errs.append(np.abs(bu[(1,)] + 0.25 * lap)[m].max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert orders.min() >= 1.0


@pytest.mark.parametrize("s", [0, 1])
def test_box_commutes_with_dbar(ball2, s):
    cx = get_complex(ball2, s)
    u = _rand(np.random.default_rng(3), cx.size(1))
    lhs = cx.A(1) @ cx.box_apply(1, u)
    rhs = cx.box_apply(2, cx.A(1) @ u)
    assert np.linalg.norm(lhs - rhs) <= 1e-9 * np.linalg.norm(lhs)


def test_harmonic_space_trivial(disk):
    h = get_complex(disk, 1).harmonic(1)
    assert h["harmonic_dim"] == 0 and h["eigen_min"] > 0


@pytest.mark.parametrize("s", [0, 1])
def test_neumann_manufactured(disk, s):
    cx = get_complex(disk, s)
    w = _rand(np.random.default_rng(20 + s), cx.size(1))
    f = cx.box_apply(1, w)
    u = cx.neumann(1, f)["u"]
    assert cx.norm(1, u - w) <= 1e-8 * cx.norm(1, w)


def test_neumann_zero(disk):
    f = FormField.zeros(disk, 1)
    u, rep = neumann_solve(f, 1, 1)
    assert u.sup() == 0 and rep["norm_ratio"] == 0.0
    with pytest.raises(ValueError):
        neumann_solve(FormField.zeros(disk, 0), 1, 1)


def test_cg_agrees_with_direct(disk):
    cx = get_complex(disk, 0)
    f = _rand(np.random.default_rng(4), cx.size(1))
    a = cx.neumann(1, f, method="direct")
    b = cx.neumann(1, f, method="cg", tol=1e-12)
    assert b["iterations"] > 0 and b["residual"] < 1e-8
    assert cx.norm(1, a["u"] - b["u"]) <= 1e-8 * cx.norm(1, a["u"])
    with pytest.raises(ValueError):
        cx.neumann(1, f, method="magic")
    with pytest.raises(SolverError):
        cx.neumann(1, f, method="cg", maxiter=2)


@pytest.mark.parametrize("n, s", [(2, 0), (1, 1), (1, 2)])
def test_hodge_pieces(disk, ball2, n, s):
    grid = ball2 if n == 2 else disk
    f = random_smooth_form(grid, 1, seed=s, k=2)
    d = hodge_decompose(f, 1, s).diagnostics
    assert d["orth_12"] < 1e-9 and d["orth_1h"] < 1e-9 and d["orth_2h"] < 1e-9
    assert d["pythagoras"] < 1e-9 and d["residual"] < 1e-8
    assert d["harmonic_dim"] == 0


def test_hodge_of_exact_form(ball2):
    g = random_smooth_form(ball2, 0, seed=7, k=2)
    f = vector_to_form(dbar_op(ball2, 0) @ form_to_vector(g), ball2, 1)
    d = hodge_decompose(f, 1, 0).diagnostics
    assert d["norm_f2"] <= 1e-8 * d["norm_f"] and d["norm_h"] <= 1e-8 * d["norm_f"]


def test_hodge_zero(ball2):
    d = hodge_decompose(FormField.zeros(ball2, 1), 1, 0).diagnostics
    assert d["norm_f1"] == d["norm_f2"] == d["norm_h"] == 0


def test_canonical_solution_is_minimal(disk):
    s = 1
    cx = get_complex(disk, s)
    rng = np.random.default_rng(8)
    gv = _rand(rng, cx.size(0))
    f = vector_to_form(cx.A(0) @ gv, disk, 1)
    v, rep = canonical_solve(f, 1, s)
    assert rep["residual"] < 1e-8
    vv = form_to_vector(v)
    kernel = null_space(cx.A(0).toarray())
    nv = cx.norm(0, vv)
    for _ in range(20):
        k = kernel @ _rand(rng, kernel.shape[1])
        assert nv <= cx.norm(0, vv + k) * (1 + 1e-12)
    # v differs from g by an element of ker dbar
    assert np.linalg.norm(cx.A(0) @ (vv - gv)) <= 1e-8 * np.linalg.norm(cx.A(0) @ gv)
    z, _ = canonical_solve(FormField.zeros(disk, 1), 1, s)
    assert z.sup() == 0


def test_canonical_rejects_non_closed(ball2):
    f = random_smooth_form(ball2, 1, seed=3, k=2)
    with pytest.raises(SolverError, match="not in the range"):
        canonical_solve(f, 1, 0)


def test_kappa_of_zero(disk):
    k = kappa_defect(FormField.zeros(disk, 1), 1)
    assert k.sup() == 0
    with pytest.raises(ValueError):
        kappa_defect(FormField.zeros(disk, 0), 1)


def test_kappa_discrete_vanishes_inside():
    g = make_ball(1, 1.0, 1 / 16)
    u, _ = _bump(g.coords)
    psi = FormField(1, {(1,): u.astype(complex)}, g, np.ones(g.shape, bool))
    assert kappa_defect(psi, 0).sup() < 1e-12 * psi.sup() / g.h


def test_boundary_identity_interior_support():
    g = make_ball(1, 1.0, 1 / 16)
    u, _ = _bump(g.coords)
    phi = FormField.scalar(g, u * (1 + 1j * g.coords[0]))
    psi = FormField(1, {(1,): (u * np.exp(1j * g.coords[1])).astype(complex)}, g, np.ones(g.shape, bool))
    gap, surf = boundary_identity_check(phi, psi, 1)
    assert abs(gap) < 1e-10 and abs(surf) < 1e-10
    with pytest.raises(ValueError, match="depth"):
        boundary_identity_check(phi.with_mask(g.level_mask(0)), psi, 1)
    with pytest.raises(ValueError):
        boundary_identity_check(phi, FormField.zeros(g, 0), 1)
