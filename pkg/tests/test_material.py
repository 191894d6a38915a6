import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import PARAMS, random_params
from hemivar.material import (
    MaterialError,
    MaterialParams,
    StrainState,
    apply_equilibrium,
    c0_margin,
    check_admissible,
    energy_density,
    quadratic_form_matrix,
    require_admissible,
    strain_tensors,
    stress_operator,
    stress_tensors,
    traction,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
strain = st.lists(finite, min_size=18, max_size=18).map(lambda v: StrainState.from_vector(np.array(v)))


@settings(max_examples=200, deadline=None)
@given(strain, strain)
def test_energy_symmetric_and_modes_agree(s, s2):
    e = energy_density(s, s2, PARAMS)
    assert e == pytest.approx(energy_density(s2, s, PARAMS), rel=1e-12, abs=1e-10)
    assert e == pytest.approx(energy_density(s, s2, PARAMS, mode="decomposed"), rel=1e-11, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(strain)
def test_energy_positive_for_admissible(s):
    v = s.as_vector()
    e = energy_density(s, s, PARAMS)
    assert e >= c0_margin(PARAMS) * (v @ v) * (1 - 1e-10) - 1e-10


def test_stress_is_energy_gradient():
    rng = np.random.default_rng(0)
    s, s2 = (StrainState.from_vector(rng.standard_normal(18)) for _ in range(2))
    work = stress_tensors(s, PARAMS).as_vector() @ s2.as_vector()
    assert work == pytest.approx(energy_density(s, s2, PARAMS), rel=1e-13)
    c = quadratic_form_matrix(PARAMS)
    assert np.allclose(c, c.T, rtol=0, atol=0)
    assert s.as_vector() @ c @ s2.as_vector() == pytest.approx(work, rel=1e-12)


def test_decomposed_undefined_for_bad_bulk():
    p = MaterialParams(1.0, 1.0, 1.0, 0.0, -1.0, 1.0, 0.0, 0.0, 1.0)
    s = StrainState.from_vector(np.ones(18))
    with pytest.raises(MaterialError):
        energy_density(s, s, p, mode="decomposed")


def test_admissibility_matches_eigenvalues():
    rng = np.random.default_rng(5)
    for _ in range(300):
        p = random_params(rng, admissible_bias=False)
        rep = check_admissible(p)
        assert rep.lists_agree
        ev = np.linalg.eigvalsh(quadratic_form_matrix(p))
        if abs(rep.margin) > 1e-8:
            assert rep.admissible == (ev[0] > 0)


def test_require_admissible_names_violation():
    p = MaterialParams(alpha=1.0, beta=1.0, gamma=1.0, delta=0.0, lam=1.0, mu=1.0, nu=2.0, kappa=0.0, epsilon=1.0)
    with pytest.raises(MaterialError, match="alpha\\*epsilon-nu\\^2"):
        require_admissible(p)
    require_admissible(PARAMS)


def test_scaling_and_body_load():
    p2 = PARAMS.scaled(2.0)
    assert p2.rho == PARAMS.rho
    assert c0_margin(p2) == pytest.approx(2 * c0_margin(PARAMS))
    assert np.allclose(MaterialParams(*PARAMS.moduli(), rho=3.0).body_load([1, 2, 3, 0, 0, 1]), [3, 6, 9, 0, 0, 3])


def _symbolic_operators(p, coef):
    x = sp.symbols("x0:3")
    mons = [1, x[0], x[1], x[2], x[0] ** 2, x[1] ** 2, x[2] ** 2, x[0] * x[1], x[1] * x[2], x[0] * x[2]]
    U = [sum(int(c) * m for c, m in zip(coef[i], mons)) for i in range(6)]
    u, w = U[:3], U[3:]
    eps = sp.LeviCivita
    kd = sp.KroneckerDelta
    upq = [[sp.diff(u[q], x[a]) - sum(eps(a, q, k) * w[k] for k in range(3)) for q in range(3)] for a in range(3)]
    wpq = [[sp.diff(w[q], x[a]) for q in range(3)] for a in range(3)]
    tu = sum(upq[i][i] for i in range(3))
    tw = sum(wpq[i][i] for i in range(3))
    tau = [
        [
            (p.mu + p.alpha) * upq[a][b] + (p.mu - p.alpha) * upq[b][a] + (p.kappa + p.nu) * wpq[a][b]
            + (p.kappa - p.nu) * wpq[b][a] + kd(a, b) * (p.lam * tu + p.delta * tw)
            for b in range(3)
        ]
        for a in range(3)
    ]
    mu_ = [
        [
            (p.kappa + p.nu) * upq[a][b] + (p.kappa - p.nu) * upq[b][a] + (p.gamma + p.epsilon) * wpq[a][b]
            + (p.gamma - p.epsilon) * wpq[b][a] + kd(a, b) * (p.delta * tu + p.beta * tw)
            for b in range(3)
        ]
        for a in range(3)
    ]
    L1 = [sum(sp.diff(tau[a][q], x[a]) for a in range(3)) for q in range(3)]
    L2 = [
        sum(sp.diff(mu_[a][q], x[a]) for a in range(3)) + sum(eps(q, l, r) * tau[l][r] for l in range(3) for r in range(3))
        for q in range(3)
    ]
    return x, U, tau, mu_, L1 + L2


def test_equilibrium_and_traction_against_symbolic():
    rng = np.random.default_rng(7)
    coef = rng.integers(-3, 4, size=(6, 10))
    x, U, tau, mu_, L = _symbolic_operators(PARAMS, coef)
    pt = {x[0]: 0.3, x[1]: -0.2, x[2]: 0.7}
    ref = np.array([float(e.subs(pt)) for e in L])
    H = np.array([[[float(sp.diff(U[c], x[i], x[j]).subs(pt)) for c in range(6)] for j in range(3)] for i in range(3)])
    G = np.array([[float(sp.diff(U[c], x[i]).subs(pt)) for c in range(6)] for i in range(3)])
    val = np.array([float(U[c].subs(pt)) for c in range(6)])
    got = apply_equilibrium(H[:, :, :3], H[:, :, 3:], G[:, :3], G[:, 3:], PARAMS, val[3:])
    assert np.allclose(got, ref, rtol=1e-12, atol=1e-11)

    n = np.array([1.0, 2.0, 2.0]) / 3.0
    t_ref = np.array([float(sum(tau[a][q].subs(pt) * n[a] for a in range(3))) for q in range(3)])
    m_ref = np.array([float(sum(mu_[a][q].subs(pt) * n[a] for a in range(3))) for q in range(3)])
    s = strain_tensors(G[:, :3], G[:, 3:], val[3:])
    assert np.allclose(traction(s, PARAMS, n), np.concatenate([t_ref, m_ref]), atol=1e-11)
    assert np.allclose(stress_operator(G[:, :3], G[:, 3:], val[3:], PARAMS, n), np.concatenate([t_ref, m_ref]), atol=1e-11)


def test_traction_rejects_non_unit_normal():
    s = StrainState.from_vector(np.ones(18))
    with pytest.raises(ValueError):
        traction(s, PARAMS, [1.0, 1.0, 0.0])


def test_rigid_motion_has_zero_strain():
    from hemivar.material import LEVI_CIVITA

    a = np.array([0.3, -1.2, 0.5])
    # u = a x x + b gives d_p u_q = eps_qkp a_k
    grad_u = np.einsum("qkp,k->pq", LEVI_CIVITA, a)
    s = strain_tensors(grad_u, np.zeros((3, 3)), a)
    assert np.allclose(s.as_vector(), 0.0, atol=1e-15)


def test_stress_matches_finite_difference_gradient():
    rng = np.random.default_rng(11)
    v = rng.standard_normal(18)
    half = lambda x: 0.5 * energy_density(StrainState.from_vector(x), StrainState.from_vector(x), PARAMS)
    h = 1e-5
    fd = np.array([(half(v + h * e) - half(v - h * e)) / (2 * h) for e in np.eye(18)])
    st = stress_tensors(StrainState.from_vector(v), PARAMS).as_vector()
    assert np.max(np.abs(fd - st)) <= 1e-6 * np.max(np.abs(st))
