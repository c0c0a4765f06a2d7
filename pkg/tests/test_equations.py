import numpy as np
import pytest

from _oracles import dense_ops, mobility_matrix, neg_laplacian_2d
from rdpdhg.equations import (
    MODEL_KINDS,
    MobilityStencil,
    SpectralOp,
    apply_operator,
    as_stencil,
    build_model,
    double_well,
    initial_condition,
    reaction_eval,
)
from rdpdhg.spectral import Grid2D, build_neg_laplacian


def test_double_well_values():
    dw = double_well()
    assert reaction_eval(dw, 1.0)[:3] == (0.0, 2.0, 0.0)
    assert reaction_eval(dw, 1.0)[3] == pytest.approx(-2.0)
    assert reaction_eval(dw, 0.0)[3] == 0.0
    assert dw.c == 2.0 and dw.lip_r == 3.0


def test_derivatives_by_finite_differences():
    dw = double_well()
    u = np.linspace(-2, 2, 81)
    d = 1e-6
    assert np.max(np.abs((dw.f(u + d) - dw.f(u - d)) / (2 * d) - dw.f_prime(u))) < 1e-6
    assert np.max(np.abs((dw.w(u + d) - dw.w(u - d)) / (2 * d) - dw.f(u))) < 1e-8


def test_remainder_formula():
    u = np.linspace(-1, 1, 11)
    assert np.allclose(double_well().remainder(u), u**3 - 3 * u)


def test_model_coefficients():
    ac = build_model("allen_cahn", 0.01)
    assert (ac.a, ac.b) == (0.01, 100.0)
    assert ac.grid.length == 0.5 and ac.ac_type and not ac.ch_type
    ch = build_model("cahn_hilliard", 0.1)
    assert ch.a == pytest.approx(0.01) and ch.b == 1.0 and ch.ch_type
    var = build_model("var_coeff", mu=5.0)
    assert var.params["sigma_bar"] == 3.5 and var.surrogate and var.ac_type
    six = build_model("sixth_order", 0.18)
    assert (six.a, six.b) == (1.0, 1.0)
    assert np.all(six.g_symbol.multipliers >= 0)


def test_unknown_kind_and_bad_eps():
    with pytest.raises(ValueError, match="unknown model kind"):
        build_model("navier_stokes")
    with pytest.raises(ValueError):
        build_model("allen_cahn", -1.0)


def test_sigma_bar_is_domain_average():
    var = build_model("var_coeff", mu=5.0, n_x=64)
    # trapezoid rule on a periodic grid is exact for sin^2
    assert np.mean(var.l_op.sigma_x) == pytest.approx(3.5, rel=1e-12)


def test_unit_stencil_on_constants_and_random(rng):
    g = Grid2D(8, 2 * np.pi)
    st = MobilityStencil(g, np.ones(g.shape), np.ones(g.shape))
    assert np.max(np.abs(st.apply(np.full(g.shape, 2.0)))) < 1e-12
    u = rng.standard_normal(g.shape)
    assert np.max(np.abs(st.apply(u) - build_neg_laplacian(g).apply(u))) < 1e-10


def test_var_coeff_zero_mu_is_laplacian(rng):
    m = build_model("var_coeff", mu=0.0, n_x=16)
    u = rng.standard_normal(m.grid.shape)
    assert np.max(np.abs(m.l_op.apply(u) - build_neg_laplacian(m.grid).apply(u))) < 1e-10


def test_stencil_matches_dense(rng):
    m = build_model("var_coeff", n_x=8)
    u = rng.standard_normal(m.grid.shape)
    dense = mobility_matrix(8, m.grid.h_x, m.l_op.sigma_x, m.l_op.sigma_y) @ u.reshape(-1)
    assert np.max(np.abs(m.l_op.apply(u).reshape(-1) - dense)) < 1e-10 * np.abs(dense).max()


def test_stencil_self_adjoint(rng):
    m = build_model("var_coeff", mu=5.0, n_x=16)
    u, v = rng.standard_normal((2,) + m.grid.shape)
    lhs, rhs = np.vdot(m.l_op.apply(u), v), np.vdot(u, m.l_op.apply(v))
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def test_face_sampling_positions():
    g = Grid2D(4, 2 * np.pi)
    st = MobilityStencil.from_function(g, lambda x, y: 10 * x + y)
    h = g.h_x
    assert st.sigma_x[1, 2] == pytest.approx(10 * 1.5 * h + 2 * h)
    assert st.sigma_y[1, 2] == pytest.approx(10 * h + 2.5 * h)


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_operators_non_negative(kind, rng):
    m = build_model(kind, n_x=8)
    for _ in range(100):
        u = rng.standard_normal(m.grid.shape)
        for op in (m.g_op, m.l_op):
            assert np.vdot(op.apply(u), u) >= -1e-10


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_operators_match_dense(kind, rng):
    m = build_model(kind, n_x=8)
    g, lmat, lp = dense_ops(m)
    u = rng.standard_normal(m.grid.shape)
    x = u.reshape(-1)
    for op, mat in ((m.g_op, g), (m.l_op, lmat)):
        ref = mat @ x
        assert np.max(np.abs(op.apply(u).reshape(-1) - ref)) < 1e-10 * max(1.0, np.abs(ref).max())
    ref = lp @ x
    assert np.max(np.abs(m.l_precond.apply(u).reshape(-1) - ref)) < 1e-10 * max(1.0, np.abs(ref).max())


def test_apply_operator_grid_check():
    m = build_model("allen_cahn", n_x=8)
    with pytest.raises(ValueError):
        apply_operator(m.l_op, np.ones((4, 4)), m.grid)
    with pytest.raises(ValueError):
        m.l_op.apply(np.ones((4, 4)))


def test_identity_op_returns_copy():
    m = build_model("allen_cahn", n_x=8)
    u = np.ones(m.grid.shape)
    out = m.g_op.apply(u)
    out[0, 0] = 5.0
    assert u[0, 0] == 1.0


def test_as_stencil():
    m = build_model("allen_cahn", n_x=8)
    st = as_stencil(m.l_op, m.grid)
    assert np.allclose(st.sigma_x, 1.0)
    scaled = as_stencil(SpectralOp(3.0 * build_neg_laplacian(m.grid)), m.grid)
    assert np.allclose(scaled.sigma_y, 3.0)
    with pytest.raises(ValueError):
        as_stencil(build_model("sixth_order", n_x=8).g_op, m.grid)


def test_initial_conditions():
    ac = build_model("allen_cahn", n_x=64)
    u = initial_condition(ac)
    assert set(np.unique(u)) == {-1.0, 1.0}
    assert u[16, 16] == 1.0 and u[0, 0] == -1.0
    for kind in MODEL_KINDS[1:]:
        u = initial_condition(build_model(kind, n_x=32))
        assert u.shape == (32, 32) and np.all(np.isfinite(u))
    ch = initial_condition(build_model("cahn_hilliard", n_x=64))
    assert ch.min() >= -1.0 and ch.max() <= 1.0 + 1e-12
