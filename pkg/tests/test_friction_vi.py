import numpy as np
import pytest

import oracles
from conftest import PARAMS, coercive_problem, semicoercive_problem, tangential
from hemivar.fem import assemble_stiffness
from hemivar.friction_vi import (
    FrictionSpec,
    MarginError,
    VIConvergenceError,
    VIError,
    VIOptions,
    VIProblem,
    friction_functional,
    kkt_verify,
    solve,
    solve_semismooth,
    solve_uzawa,
    total_functional,
)
from hemivar.mesh import cube_mesh
from hemivar.solvability import quotient_compare
from hemivar.steklov import build_dtn


@pytest.fixture(scope="module")
def cube1():
    m = cube_mesh(1)
    return build_dtn(assemble_stiffness(m, PARAMS), m)


@pytest.mark.parametrize("g_value", [0.15, 1.0, 2.0])
def test_coercive_matches_primal_oracle(cube1, g_value):
    prob = coercive_problem(cube1, g_value)
    su = solve_uzawa(prob)
    sn = solve_semismooth(prob)
    ho, _ = oracles.proximal_gradient(prob.A, prob.ell, prob.trace, prob.friction.g, prob.friction.phi0, prob.fixed)
    assert np.abs(su.h0 - ho).max() < 1e-6
    assert np.abs(sn.h0 - su.h0).max() < 1e-7
    assert su.energy == pytest.approx(oracles.objective(ho, prob.A, prob.ell, prob.trace, prob.friction.g, prob.friction.phi0), rel=1e-8)


def test_subgradient_oracle_error_decays(cube1):
    prob = coercive_problem(cube1, 1.0)
    data = (prob.A, prob.ell, prob.trace, prob.friction.g, prob.friction.phi0, prob.fixed)
    ref = solve_uzawa(prob).h0
    e = [np.abs(oracles.subgradient(*data, n_iter=n) - ref).max() for n in (10_000, 100_000)]
    assert e[1] < 0.2 * e[0]


def test_coercive_matches_cone_program(cube1):
    prob = coercive_problem(cube1, 1.0)
    hs = oracles.socp(prob.A, prob.ell, prob.trace, prob.friction.g, prob.friction.phi0, prob.fixed)
    assert np.abs(solve_uzawa(prob).h0 - hs).max() < 1e-5


def test_uzawa_energy_monotone(cube2):
    prob = coercive_problem(cube2[2], 0.5)
    sol = solve_uzawa(prob, VIOptions(record_energy=True))
    e = np.array(sol.energies)
    assert len(e) > 2
    assert np.max(np.diff(e)) <= 1e-12 * max(abs(e).max(), 1.0)


def test_accelerated_uzawa_agrees(cube2):
    prob = coercive_problem(cube2[2], 0.5)
    a = solve_uzawa(prob)
    b = solve_uzawa(prob, VIOptions(accelerate=True))
    assert np.abs(a.h0 - b.h0).max() < 1e-7


def test_kkt_passes_and_detects_tampering(cube2):
    prob = coercive_problem(cube2[2], 0.5)
    sol = solve_semismooth(prob)
    rep = kkt_verify(sol, prob)
    assert rep.passed, rep.lines()
    assert set(rep.checks) == {"dual_feasibility", "stick", "alignment", "equilibrium", "variational_ineq"}
    bad = solve_semismooth(prob)
    bad.lam = 1.5 * bad.lam
    assert not kkt_verify(bad, prob).checks["dual_feasibility"]
    bad = solve_semismooth(prob)
    bad.h0 = bad.h0 + 1e-3 * np.where(prob.fixed, 0.0, 1.0)
    assert not kkt_verify(bad, prob).passed


def test_zero_friction_is_linear_solve(cube2):
    d = cube2[2]
    prob = coercive_problem(d, 0.0)
    sol = solve(prob)
    f = prob.free
    ref = np.linalg.solve(d.matrix[np.ix_(f, f)], prob.ell[f])
    assert np.allclose(sol.h0[f], ref, atol=1e-10)


def test_large_friction_sticks(cube2):
    prob = coercive_problem(cube2[2], 1e3)
    sol = solve_uzawa(prob)
    assert np.abs(prob.slip(sol.h0)).max() < 1e-8


def test_friction_functional_lumped():
    m = cube_mesh(1)
    d = build_dtn(assemble_stiffness(m, PARAMS), m)
    tm = d.trace
    fs = FrictionSpec(np.where(tm.w2 > 0, 2.0, 0.0), np.zeros((tm.n, 3)))
    h = np.zeros(d.n)
    h.reshape(-1, 6)[:, :3] = tm.tangents[:, 0]
    assert friction_functional(h, fs, tm) == pytest.approx(2.0 * tm.w2.sum())


def test_semicoercive_paths_agree_modulo_rigid(cube2_free):
    d = cube2_free[2]
    prob = semicoercive_problem(d, 1.0)
    sa = solve_uzawa(prob)
    sb = solve_semismooth(prob)
    assert quotient_compare(sa.h0, sb.h0, d.kernel_basis, d) < 1e-7
    assert kkt_verify(sa, prob).passed
    assert kkt_verify(sb, prob).passed
    assert sa.margin.strict


def test_semicoercive_refuses_without_margin(cube2_free):
    d = cube2_free[2]
    prob = semicoercive_problem(d, 0.0)
    with pytest.raises(MarginError) as exc:
        solve_uzawa(prob)
    assert exc.value.report.margin < 0
    with pytest.raises(MarginError):
        solve_semismooth(prob)


def test_problem_validation(cube2, cube2_free):
    d = cube2[2]
    tm = d.trace
    rng = np.random.default_rng(0)
    with pytest.raises(VIError, match="tangential"):
        VIProblem(d.matrix, tm, FrictionSpec(np.ones(tm.n), tm.normals.copy()), np.zeros(d.n), "coercive_A0", np.repeat(tm.is_s1, 6))
    with pytest.raises(VIError, match="nonnegative"):
        VIProblem(d.matrix, tm, FrictionSpec(-np.ones(tm.n), np.zeros((tm.n, 3))), np.zeros(d.n), "coercive_A0", np.repeat(tm.is_s1, 6))
    with pytest.raises(VIError, match="Dirichlet"):
        VIProblem(d.matrix, tm, FrictionSpec(np.ones(tm.n), tangential(rng, tm, 0.1)), np.zeros(d.n), "coercive_A0")
    df = cube2_free[2]
    with pytest.raises(VIError, match="rigid basis"):
        VIProblem(df.matrix, df.trace, FrictionSpec(np.ones(df.trace.n), np.zeros((df.trace.n, 3))), np.zeros(df.n), "semicoercive_B0")
    prob = coercive_problem(d, 1.0)
    with pytest.raises(VIError):
        total_functional(np.ones(d.n), prob)


def test_iteration_cap_raises(cube2):
    prob = coercive_problem(cube2[2], 0.5)
    with pytest.raises(VIConvergenceError):
        solve_uzawa(prob, VIOptions(max_iter=3))


def test_different_starting_multipliers_agree(cube2):
    prob = coercive_problem(cube2[2], 0.5)
    rng = np.random.default_rng(4)
    lam0 = rng.standard_normal(2 * len(prob.nodes))
    a = solve_uzawa(prob, VIOptions(tol=1e-11))
    b = solve_uzawa(prob, VIOptions(tol=1e-11, lam0=lam0))
    c = solve_semismooth(prob, VIOptions(tol=1e-11, lam0=0.5 * lam0))
    assert np.abs(a.h0 - b.h0).max() < 1e-8
    assert np.abs(a.h0 - c.h0).max() < 1e-8


@pytest.mark.parametrize("t", [0.5, 2.0])
def test_positive_homogeneity(cube2, t):
    base = coercive_problem(cube2[2], 0.5, phi_scale=0.0)
    fs = FrictionSpec(t * base.friction.g, base.friction.phi0)
    scaled = VIProblem(base.A, base.trace, fs, t * base.ell, base.kind, base.fixed)
    h = solve_semismooth(base, VIOptions(tol=1e-11)).h0
    ht = solve_semismooth(scaled, VIOptions(tol=1e-11)).h0
    assert np.abs(ht - t * h).max() <= 1e-8 * np.abs(t * h).max()
