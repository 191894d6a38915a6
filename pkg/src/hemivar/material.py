"""Hemitropic (chiral micropolar) constitutive law.

Kinematics are expressed through the asymmetric strain ``u_pq`` and the
torsion/curvature ``om_pq``; gradients follow the convention
``grad_u[p, q] = d u_q / d x_p``. Strain vectors of length 18 use row-major
``(p, q)`` ordering, ``u_pq`` first, then ``om_pq``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from functools import lru_cache
from typing import Literal

import numpy as np

# Levi-Civita symbol, eps[p, q, k]
LEVI_CIVITA = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    LEVI_CIVITA[_i, _j, _k] = 1.0
    LEVI_CIVITA[_i, _k, _j] = -1.0

MODULI = ("alpha", "beta", "gamma", "delta", "lam", "mu", "nu", "kappa", "epsilon")


class MaterialError(ValueError):
    """Raised for inadmissible moduli or an undefined evaluation mode."""


@dataclass(frozen=True)
class MaterialParams:
    """The nine hemitropic moduli plus mass density.

    ``lam`` is the Lame-type modulus (``lambda`` in config files). ``rho`` only
    scales body loads, ``X = rho * X_tilde``.
    """

    alpha: float
    beta: float
    gamma: float
    delta: float
    lam: float
    mu: float
    nu: float
    kappa: float
    epsilon: float
    rho: float = 1.0

    def scaled(self, t: float) -> MaterialParams:
        kw = {f.name: getattr(self, f.name) * (t if f.name != "rho" else 1.0) for f in fields(self)}
        return MaterialParams(**kw)

    def moduli(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in MODULI])

    def body_load(self, x_tilde) -> np.ndarray:
        return self.rho * np.asarray(x_tilde, dtype=float)


@dataclass(frozen=True)
class StrainState:
    u_pq: np.ndarray
    om_pq: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([np.ravel(self.u_pq), np.ravel(self.om_pq)])

    @classmethod
    def from_vector(cls, v) -> StrainState:
        v = np.asarray(v, dtype=float)
        return cls(v[:9].reshape(3, 3).copy(), v[9:].reshape(3, 3).copy())


@dataclass(frozen=True)
class StressState:
    tau_pq: np.ndarray
    mu_pq: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([np.ravel(self.tau_pq), np.ravel(self.mu_pq)])


@dataclass(frozen=True)
class AdmissibilityReport:
    admissible: bool
    margin: float
    reduced_admissible: bool | None
    lists_agree: bool | None
    violated: tuple[str, ...]


def strain_tensors(grad_u, grad_om, om) -> StrainState:
    grad_u = np.asarray(grad_u, dtype=float)
    grad_om = np.asarray(grad_om, dtype=float)
    om = np.asarray(om, dtype=float)
    u_pq = grad_u - np.einsum("pqk,k->pq", LEVI_CIVITA, om)
    return StrainState(u_pq, grad_om.copy())


def stress_tensors(s: StrainState, p: MaterialParams) -> StressState:
    u, w = np.asarray(s.u_pq), np.asarray(s.om_pq)
    eye = np.eye(3)
    tr_u, tr_w = np.trace(u), np.trace(w)
    tau = (
        (p.mu + p.alpha) * u
        + (p.mu - p.alpha) * u.T
        + (p.kappa + p.nu) * w
        + (p.kappa - p.nu) * w.T
        + (p.lam * tr_u + p.delta * tr_w) * eye
    )
    mu_ = (
        (p.kappa + p.nu) * u
        + (p.kappa - p.nu) * u.T
        + (p.gamma + p.epsilon) * w
        + (p.gamma - p.epsilon) * w.T
        + (p.delta * tr_u + p.beta * tr_w) * eye
    )
    return StressState(tau, mu_)


def _energy_direct(s: StrainState, s2: StrainState, p: MaterialParams) -> float:
    u, w = s.u_pq, s.om_pq
    u2, w2 = s2.u_pq, s2.om_pq
    val = (
        (p.mu + p.alpha) * np.sum(u2 * u)
        + (p.mu - p.alpha) * np.sum(u2 * u.T)
        + (p.kappa + p.nu) * (np.sum(u2 * w) + np.sum(w2 * u))
        + (p.kappa - p.nu) * (np.sum(u2 * w.T) + np.sum(w2 * u.T))
        + (p.gamma + p.epsilon) * np.sum(w2 * w)
        + (p.gamma - p.epsilon) * np.sum(w2 * w.T)
        + p.delta * (np.trace(u2) * np.trace(w) + np.trace(w2) * np.trace(u))
        + p.lam * np.trace(u2) * np.trace(u)
        + p.beta * np.trace(w2) * np.trace(w)
    )
    return float(val)


def _energy_decomposed(s: StrainState, s2: StrainState, p: MaterialParams) -> float:
    # sym(u_pq) = sym(grad u); eps_ijk u_jk = curl u - 2 om; eps_ijk om_jk = curl om
    k3 = 3 * p.lam + 2 * p.mu
    if not k3 > 0 or not p.alpha > 0:
        raise MaterialError("decomposed energy requires 3*lambda + 2*mu > 0 and alpha > 0")
    c = (3 * p.delta + 2 * p.kappa) / k3
    r = p.kappa / p.mu

    def parts(st):
        u, w = st.u_pq, st.om_pq
        d = np.diag(u)
        dw = np.diag(w)
        return (
            np.trace(u),
            np.trace(w),
            u + u.T,
            w + w.T,
            d[:, None] - d[None, :],
            dw[:, None] - dw[None, :],
            np.einsum("ijk,jk->i", LEVI_CIVITA, u),
            np.einsum("ijk,jk->i", LEVI_CIVITA, w),
        )

    tu, tw, su, sw, du, dw, cu, cw = parts(s)
    tu2, tw2, su2, sw2, du2, dw2, cu2, cw2 = parts(s2)
    off = ~np.eye(3, dtype=bool)
    val = k3 / 3 * (tu + c * tw) * (tu2 + c * tw2)
    val += (3 * p.beta + 2 * p.gamma - (3 * p.delta + 2 * p.kappa) ** 2 / k3) / 3 * tw * tw2
    val += p.mu / 2 * np.sum(((su + r * sw) * (su2 + r * sw2))[off])
    val += p.mu / 3 * np.sum((du + r * dw) * (du2 + r * dw2))
    g = p.gamma - p.kappa**2 / p.mu
    val += g * (0.5 * np.sum((sw * sw2)[off]) + np.sum(dw * dw2) / 3)
    a = p.nu / p.alpha
    val += p.alpha * np.dot(cu + a * cw, cu2 + a * cw2)
    val += (p.epsilon - p.nu**2 / p.alpha) * np.dot(cw, cw2)
    return float(val)


def energy_density(
    s: StrainState,
    s2: StrainState,
    p: MaterialParams,
    mode: Literal["direct", "decomposed"] = "direct",
) -> float:
    """Symmetric bilinear energy form E(U, U') at a point.

    ``direct`` evaluates the moduli-weighted strain products; ``decomposed``
    uses the sum-of-squares split (volumetric, deviatoric, rotational) and is
    defined only for ``3*lam + 2*mu > 0`` and ``alpha > 0``.
    """
    if mode == "direct":
        return _energy_direct(s, s2, p)
    if mode == "decomposed":
        return _energy_decomposed(s, s2, p)
    raise MaterialError(f"unknown energy mode {mode!r}")


def _form_matrix_direct(p: MaterialParams) -> np.ndarray:
    states = [StrainState.from_vector(b) for b in np.eye(18)]
    c = np.empty((18, 18))
    for i in range(18):
        for j in range(i, 18):
            c[i, j] = c[j, i] = _energy_direct(states[i], states[j], p)
    return c


@lru_cache(maxsize=1)
def _unit_form_matrices() -> np.ndarray:
    # the form is linear in the moduli: one 18x18 matrix per modulus
    eye = np.eye(len(MODULI))
    return np.array([_form_matrix_direct(MaterialParams(*row)) for row in eye])


def quadratic_form_matrix(p: MaterialParams) -> np.ndarray:
    """18x18 matrix C with E(s, s') = s^T C s' on strain vectors."""
    return np.tensordot(p.moduli(), _unit_form_matrices(), axes=1)


def _inequalities(p: MaterialParams, reduced: bool) -> list[tuple[str, float, float]]:
    """(name, value, scale) triples; admissible iff every value > tol * scale."""
    al, be, ga, de, la, mu, nu, ka, ep = p.moduli()
    lm, bg, dk = la + mu, be + ga, de + ka
    k3, b3, d3 = 3 * la + 2 * mu, 3 * be + 2 * ga, 3 * de + 2 * ka
    out = [
        ("mu>0", mu, abs(mu)),
        ("alpha>0", al, abs(al)),
        ("gamma>0", ga, abs(ga)),
        ("epsilon>0", ep, abs(ep)),
    ]
    if reduced:
        out.append(("3lambda+2mu>0", k3, 3 * abs(la) + 2 * abs(mu)))
    else:
        out.append(("lambda+2mu>0", la + 2 * mu, abs(la) + 2 * abs(mu)))
    out += [
        ("mu*gamma-kappa^2>0", mu * ga - ka**2, abs(mu * ga) + ka**2),
        ("alpha*epsilon-nu^2>0", al * ep - nu**2, abs(al * ep) + nu**2),
    ]
    if not reduced:
        out.append(("(l+m)(b+g)-(d+k)^2>0", lm * bg - dk**2, abs(lm * bg) + dk**2))
    out.append(("(3l+2m)(3b+2g)-(3d+2k)^2>0", k3 * b3 - d3**2, abs(k3 * b3) + d3**2))
    mpa, gpe, kpn = mu + al, ga + ep, ka + nu
    out.append(("(m+a)(g+e)-(k+n)^2>0", mpa * gpe - kpn**2, abs(mpa * gpe) + kpn**2))
    if not reduced:
        l2, b2, d2 = la + 2 * mu, be + 2 * ga, de + 2 * ka
        out.append(("(l+2m)(b+2g)-(d+2k)^2>0", l2 * b2 - d2**2, abs(l2 * b2) + d2**2))
        det1, det3, mg = lm * bg - dk**2, k3 * b3 - d3**2, mu * ga - ka**2
        out.append(
            (
                "mu*det1+(l+m)(mg-k^2)>0",
                mu * det1 + lm * mg,
                abs(mu) * (abs(lm * bg) + dk**2) + abs(lm) * (abs(mu * ga) + ka**2),
            )
        )
        out.append(
            (
                "mu*det3+(3l+2m)(mg-k^2)>0",
                mu * det3 + k3 * mg,
                abs(mu) * (abs(k3 * b3) + d3**2) + abs(k3) * (abs(mu * ga) + ka**2),
            )
        )
    return out


def _evaluate(ineqs, tol):
    violated = []
    margin = np.inf
    for name, value, scale in ineqs:
        scale = scale if scale > 0 else 1.0
        rel = value / scale
        margin = min(margin, rel)
        if not value > tol * scale:
            violated.append(name)
    return not violated, float(margin), violated


def check_admissible(p: MaterialParams, tol: float = 1e-14) -> AdmissibilityReport:
    """Evaluate the positivity inequalities on the moduli.

    ``margin`` is the smallest relative slack ``value / scale`` over the full
    list, where ``scale`` sums the magnitudes of the terms of each expression.
    When ``3*lam + 2*mu > 0`` the reduced list is evaluated too and
    ``lists_agree`` records whether both verdicts coincide.
    """
    ok, margin, violated = _evaluate(_inequalities(p, reduced=False), tol)
    reduced_ok = agree = None
    if 3 * p.lam + 2 * p.mu > 0:
        reduced_ok, _, _ = _evaluate(_inequalities(p, reduced=True), tol)
        agree = reduced_ok == ok
    return AdmissibilityReport(ok, margin, reduced_ok, agree, tuple(violated))


def require_admissible(p: MaterialParams) -> None:
    rep = check_admissible(p)
    if not rep.admissible:
        raise MaterialError(f"inadmissible material: violates {', '.join(rep.violated)}")


def c0_margin(p: MaterialParams) -> float:
    """Largest c0 with E(U,U) >= c0 * sum(u_pq^2 + om_pq^2)."""
    return float(np.linalg.eigvalsh(quadratic_form_matrix(p))[0])


def traction(s: StrainState, p: MaterialParams, n) -> np.ndarray:
    """Force and couple stress vectors (tau^(n), mu^(n)) on a surface with unit normal n."""
    n = np.asarray(n, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > 1e-10:
        raise ValueError(f"normal must have unit length, got |n| = {np.linalg.norm(n):.6g}")
    st = stress_tensors(s, p)
    return np.concatenate([st.tau_pq.T @ n, st.mu_pq.T @ n])


def stress_operator(grad_u, grad_om, om, p: MaterialParams, n) -> np.ndarray:
    """Apply the 6x6 boundary stress operator T(d, n) to a field given by its
    gradients and micro-rotation at a point."""
    gu = np.asarray(grad_u, dtype=float)
    gw = np.asarray(grad_om, dtype=float)
    om = np.asarray(om, dtype=float)
    n = np.asarray(n, dtype=float)
    eps_n = np.einsum("pqk,k->pq", LEVI_CIVITA, n)

    def block(c_plus, c_minus, c_diag, g):
        # row p: c_plus * d_n g_p + c_minus * sum_q n_q d_p g_q + c_diag * n_p div g
        return c_plus * (g.T @ n) + c_minus * (g @ n) + c_diag * n * np.trace(g)

    t_u = block(p.mu + p.alpha, p.mu - p.alpha, p.lam, gu)
    t_u += block(p.kappa + p.nu, p.kappa - p.nu, p.delta, gw) - 2 * p.alpha * eps_n @ om
    t_w = block(p.kappa + p.nu, p.kappa - p.nu, p.delta, gu)
    t_w += block(p.gamma + p.epsilon, p.gamma - p.epsilon, p.beta, gw) - 2 * p.nu * eps_n @ om
    return np.concatenate([t_u, t_w])


def apply_equilibrium(hess_u, hess_om, grad_u, grad_om, p: MaterialParams, om=None) -> np.ndarray:
    """Evaluate L(d)U at a point from second and first derivatives.

    ``hess_u[i, j, q] = d^2 u_q / dx_i dx_j``. Only the zero-order term
    ``-4 alpha om`` needs the micro-rotation value itself.
    """
    hu = np.asarray(hess_u, dtype=float)
    hw = np.asarray(hess_om, dtype=float)
    gu = np.asarray(grad_u, dtype=float)
    gw = np.asarray(grad_om, dtype=float)
    om = np.zeros(3) if om is None else np.asarray(om, dtype=float)

    def lap(h):
        return np.einsum("iiq->q", h)

    def graddiv(h):
        return np.einsum("qjj->q", h)

    def curl(g):
        return np.einsum("ijk,jk->i", LEVI_CIVITA, g)

    eq_u = (
        (p.mu + p.alpha) * lap(hu)
        + (p.lam + p.mu - p.alpha) * graddiv(hu)
        + (p.kappa + p.nu) * lap(hw)
        + (p.delta + p.kappa - p.nu) * graddiv(hw)
        + 2 * p.alpha * curl(gw)
    )
    eq_w = (
        (p.kappa + p.nu) * lap(hu)
        + (p.delta + p.kappa - p.nu) * graddiv(hu)
        + 2 * p.alpha * curl(gu)
        + (p.gamma + p.epsilon) * lap(hw)
        + (p.beta + p.gamma - p.epsilon) * graddiv(hw)
        + 4 * p.nu * curl(gw)
        - 4 * p.alpha * om
    )
    return np.concatenate([eq_u, eq_w])
