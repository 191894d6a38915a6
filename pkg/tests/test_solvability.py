import numpy as np
import pytest

import oracles
from conftest import semicoercive_problem
from hemivar.friction_vi import FrictionSpec, VIProblem
from hemivar.solvability import check_necessary, descent_along, normalize_representative, quotient_compare


def _with_g(prob, g_value):
    tm = prob.trace
    fs = FrictionSpec(np.full(tm.n, g_value), prob.friction.phi0)
    return VIProblem(prob.A, tm, fs, prob.ell, prob.kind, None, prob.basis, prob.operator)


@pytest.mark.parametrize("g_value", [0.0, 0.05, 0.3, 1.0])
def test_margin_sign_matches_cone_oracle(cube2_free, g_value):
    prob = semicoercive_problem(cube2_free[2], g_value)
    rep = check_necessary(prob)
    assert rep.sample_min >= rep.margin - 1e-12 * rep.scale
    if g_value == 0.0:
        assert rep.margin < 0
        return
    sign = oracles.margin_sign(prob.J, prob.gamma, prob.ell, prob.basis.fields)
    assert sign == (1 if rep.strict else -1)


def test_margin_is_attained_value(cube2_free):
    prob = semicoercive_problem(cube2_free[2], 0.3)
    rep = check_necessary(prob)
    assert np.linalg.norm(rep.coefficients) == pytest.approx(1.0)
    assert rep.margin == pytest.approx(rep.friction_term - abs(rep.load_term), abs=1e-12)
    assert rep.load_term >= 0


def test_margin_monotone_in_g(cube2_free):
    base = semicoercive_problem(cube2_free[2], 0.0)
    ms = [check_necessary(_with_g(base, s)).margin for s in (0.0, 0.05, 0.1, 0.2, 0.4)]
    assert np.all(np.diff(ms) > 0)


def test_margin_homogeneous_and_even(cube2_free):
    from hemivar.solvability import _Margin

    prob = semicoercive_problem(cube2_free[2], 0.3)
    mf = _Margin(prob.J, prob.gamma, prob.ell, prob.basis)
    c = np.random.default_rng(0).standard_normal((200, 6))
    v = mf(c)
    assert np.allclose(mf(2.5 * c), 2.5 * v, rtol=1e-13, atol=1e-14)
    assert np.allclose(mf(-c), v, rtol=1e-13, atol=1e-14)


def test_refusal_comes_with_unbounded_descent(cube2_free):
    from hemivar.friction_vi import MarginError, solve_uzawa

    prob = semicoercive_problem(cube2_free[2], 0.0)
    with pytest.raises(MarginError) as exc:
        solve_uzawa(prob)
    rep = exc.value.report
    e = descent_along(prob, rep.chi, [0.0, 1.0, 10.0, 100.0])
    assert np.all(np.diff(e) < 0)
    assert e[-1] < -50 * abs(rep.margin)


def test_quotient_ignores_rigid_shift(cube2_free):
    d = cube2_free[2]
    rng = np.random.default_rng(0)
    h = rng.standard_normal(d.n)
    shifted = h + d.kernel_basis.combine(rng.standard_normal(6))
    assert quotient_compare(h, shifted, d.kernel_basis, d) < 1e-10
    assert quotient_compare(h, shifted, d.kernel_basis) < 1e-10
    q = normalize_representative(h, d.kernel_basis)
    assert np.abs(d.kernel_basis.coefficients(q)).max() < 1e-12
