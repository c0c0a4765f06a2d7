import numpy as np
import pytest

from _oracles import dense_F, dense_jacobian, dense_M
from rdpdhg.baselines import newton_solve
from rdpdhg.equations import build_model, initial_condition
from rdpdhg.implicit import eval_F, make_problem, residual_inf
from rdpdhg.pdhg import (
    PdhgParams,
    PdhgState,
    SolveStats,
    gprox_step,
    pdhg_step,
    rate_series,
    solve_window,
    write_stats_csv,
)
from rdpdhg.precond import apply_M_inverse, apply_M_transpose, build_precond


def _ac(n_x=16, eps0=0.1):
    m = build_model("allen_cahn", eps0, n_x=n_x)
    return m, initial_condition(m)


def test_params_validation():
    with pytest.raises(ValueError):
        PdhgParams(tau_u=0.0)
    with pytest.raises(ValueError):
        PdhgParams(tol=-1.0)
    with pytest.raises(ValueError):
        PdhgParams(omega=float("nan"))
    p = PdhgParams()
    assert (p.omega, p.epsilon, p.tol, p.preconditioned) == (1.0, 0.1, 1e-6, True)


def test_step_matches_dense_oracle(rng):
    m = build_model("allen_cahn", 0.1, n_x=4)
    u0 = rng.uniform(-1, 1, (4, 4))
    h_t = 0.004
    prob = make_problem(m, u0, 1, h_t)
    pc = build_precond(m, 1, h_t)
    params = PdhgParams(tau_u=0.4, tau_p=0.7, omega=1.0, epsilon=0.2)
    u = prob.replicate()
    q = 0.1 * rng.standard_normal(prob.shape)
    new = pdhg_step(prob, pc, PdhgState(u, q), params)
    mat = dense_M(m, 1, h_t)
    minv = np.linalg.inv(mat)
    x, qx = u.reshape(-1), q.reshape(-1)
    q1 = (qx + 0.7 * minv @ dense_F(m, u0, 1, h_t, u).reshape(-1)) / (1 + 0.2 * 0.7)
    qt = q1 + (q1 - qx)
    u1 = x - 0.4 * dense_jacobian(m, 1, h_t, u).T @ (minv.T @ qt)
    assert np.max(np.abs(new.q.reshape(-1) - q1)) < 1e-12
    assert np.max(np.abs(new.u.reshape(-1) - u1)) < 1e-12
    assert new.iter == 1


def test_unpreconditioned_step_uses_identity(rng):
    m = build_model("allen_cahn", 0.1, n_x=4)
    prob = make_problem(m, rng.uniform(-1, 1, (4, 4)), 2, 0.004)
    pc = build_precond(m, 2, 0.004)
    params = PdhgParams(preconditioned=False, tau_u=0.1, tau_p=0.2)
    u = prob.replicate()
    F = eval_F(prob, u)
    new = pdhg_step(prob, pc, PdhgState(u, np.zeros(prob.shape)), params)
    assert np.allclose(new.q, 0.2 * F / (1 + 0.1 * 0.2))


def test_equilibrium_is_fixed_point():
    m = build_model("allen_cahn", 0.1, n_x=8)
    prob = make_problem(m, np.ones((8, 8)), 2, 0.004)
    pc = build_precond(m, 2, 0.004)
    s = PdhgState(prob.replicate(), np.zeros(prob.shape))
    new = pdhg_step(prob, pc, s, PdhgParams())
    assert np.array_equal(new.u, s.u) and np.array_equal(new.q, s.q)


def test_linear_case_converges_geometrically():
    m = build_model("cahn_hilliard", 0.1, n_x=16)
    u0 = initial_condition(m)
    m = type(m)(m.name, m.grid, m.a, 0.0, m.g_op, m.l_op, m.l_precond, m.reaction)
    prob = make_problem(m, u0, 3, 0.01)
    pc = build_precond(m, 3, 0.01)
    u, st = solve_window(prob, pc, PdhgParams(tol=1e-10))
    assert st.converged
    # with b = 0 the preconditioner is the whole linear map, so the root is M^{-1} V
    assert np.max(np.abs(u - apply_M_inverse(pc, prob.v))) < 1e-10
    # the step ratio oscillates; over blocks of ten steps it always contracts
    f = st.fhat_norms()
    blocks = f[10::10] / f[:-10:10][: len(f[10::10])]
    assert np.all(blocks < 1.0)


def test_paper_ac_setting_converges():
    m = build_model("allen_cahn", 0.01, n_x=64)
    prob = make_problem(m, initial_condition(m), 1, 0.02)
    u, st = solve_window(prob, build_precond(m, 1, 0.02), PdhgParams(tau_u=0.55, tau_p=0.95))
    assert st.converged and st.final_residual < 1e-6
    assert residual_inf(prob, u) < 1e-6
    assert len(st.residual_history) == st.iterations + 1


def test_exact_root_needs_no_iterations():
    m, u0 = _ac(16)
    prob = make_problem(m, u0, 1, 0.005)
    pc = build_precond(m, 1, 0.005)
    root, _ = solve_window(prob, pc, PdhgParams(tol=1e-12))
    _, st = solve_window(prob, pc, PdhgParams(tol=1e-6), u_init=root)
    assert st.converged and st.iterations == 0


def test_agrees_with_newton():
    m, u0 = _ac(32)
    prob = make_problem(m, u0, 1, 0.005)
    u, st = solve_window(prob, build_precond(m, 1, 0.005), PdhgParams(tol=1e-9))
    un = newton_solve(m, u0, 0.005, tol=1e-9)
    assert np.max(np.abs(u[0] - un)) < 1e-6


@pytest.mark.parametrize("h_t,tau_u,tau_p", [(0.001, 0.5, 0.9), (0.02, 0.55, 0.95)])
def test_history_trend_non_increasing(h_t, tau_u, tau_p):
    m = build_model("allen_cahn", 0.01, n_x=64)
    prob = make_problem(m, initial_condition(m), 1, h_t)
    _, st = solve_window(prob, build_precond(m, 1, h_t), PdhgParams(tau_u=tau_u, tau_p=tau_p))
    f = st.fhat_norms()
    # single steps spiral (ratios up to ~1.6); the envelope over 10 steps decays
    env = np.array([f[k : k + 10].max() for k in range(10, len(f) - 9)])
    assert np.all(env[1:] <= 1.05 * env[:-1])


def test_deterministic():
    m, u0 = _ac(16)
    prob = make_problem(m, u0, 2, 0.002)
    pc = build_precond(m, 2, 0.002)
    a, sa = solve_window(prob, pc, PdhgParams(max_iter=50))
    b, sb = solve_window(prob, pc, PdhgParams(max_iter=50))
    assert np.array_equal(a, b) and sa.residual_history == sb.residual_history


def test_divergence_is_reported_not_raised():
    m = build_model("cahn_hilliard", 0.1, n_x=32)
    prob = make_problem(m, initial_condition(m), 1, 0.05)
    _, st = solve_window(prob, build_precond(m, 1, 0.05), PdhgParams(tau_u=50.0, tau_p=50.0, max_iter=2000))
    assert st.diverged and not st.converged


def test_gprox_identity_case_matches_unpreconditioned(rng):
    m = build_model("allen_cahn", 0.1, n_x=4)
    m = type(m)(m.name, m.grid, 0.0, 0.0, m.g_op, m.l_op, m.l_precond, m.reaction)
    prob = make_problem(m, rng.standard_normal((4, 4)), 1, 0.01)
    pc = build_precond(m, 1, 0.01)
    assert pc.is_identity
    s = PdhgState(rng.standard_normal(prob.shape), rng.standard_normal(prob.shape))
    a = gprox_step(prob, pc, s, PdhgParams())
    b = pdhg_step(prob, pc, s, PdhgParams(preconditioned=False))
    assert np.allclose(a.u, b.u, atol=1e-14) and np.allclose(a.q, b.q, atol=1e-14)


def test_gprox_equivalence(rng):
    m, _ = _ac(8)
    prob = make_problem(m, rng.uniform(-1, 1, (8, 8)), 2, 0.003)
    pc = build_precond(m, 2, 0.003)
    params = PdhgParams()
    u = rng.uniform(-1, 1, prob.shape)
    p = 0.1 * rng.standard_normal(prob.shape)
    sp = PdhgState(u.copy(), p)
    sq = PdhgState(u.copy(), apply_M_transpose(pc, p))
    for _ in range(10):
        sp = gprox_step(prob, pc, sp, params)
        sq = pdhg_step(prob, pc, sq, params)
        assert np.max(np.abs(apply_M_transpose(pc, sp.q) - sq.q)) < 1e-12
        assert np.max(np.abs(sp.u - sq.u)) < 1e-12


def test_gprox_stationary_at_equilibrium():
    m, _ = _ac(8)
    prob = make_problem(m, -np.ones((8, 8)), 1, 0.003)
    s = PdhgState(prob.replicate(), np.zeros(prob.shape))
    new = gprox_step(prob, build_precond(m, 1, 0.003), s, PdhgParams())
    assert np.array_equal(new.u, s.u)


def test_rate_series_examples():
    r, rbar = rate_series([1.0, 0.1, 0.01])
    assert np.allclose(r, [1.0, 1.0]) and rbar == pytest.approx(1.0)
    assert rate_series([2.0] * 5)[1] == 0.0
    r, _ = rate_series([3.0 * 0.7**k for k in range(20)])
    assert np.allclose(r, -np.log10(0.7))
    assert rate_series([1.0, 0.1, 0.1, 0.1], prefix=1)[1] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        rate_series([1.0, 0.0])
    with pytest.raises(ValueError):
        rate_series([1.0])


def test_rate_series_accepts_history_pairs():
    st = SolveStats(iterations=2, residual_history=[(5.0, 1.0), (4.0, 0.1), (3.0, 0.01)])
    assert rate_series(st.residual_history)[1] == pytest.approx(1.0)


def test_stats_csv(tmp_path):
    st = SolveStats(iterations=1, residual_history=[(1.0, 2.0), (0.5, 0.2)], converged=True)
    p = tmp_path / "s.csv"
    write_stats_csv(st, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "iter,res_inf,fhat_l2,rate"
    assert lines[1] == "0,1,2,"
    assert float(lines[2].split(",")[3]) == pytest.approx(1.0)


@pytest.mark.parametrize("kind,eps0,h_t", [("allen_cahn", 0.01, 0.002), ("cahn_hilliard", 0.1, 0.001)])
def test_iterations_grid_independent(kind, eps0, h_t):
    counts = []
    for n in (50, 100):
        m = build_model(kind, eps0, n_x=n)
        prob = make_problem(m, initial_condition(m), 1, h_t)
        _, st = solve_window(prob, build_precond(m, 1, h_t), PdhgParams())
        assert st.converged
        counts.append(st.iterations)
    assert abs(counts[1] - counts[0]) / max(counts) < 0.2
