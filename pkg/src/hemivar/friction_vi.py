"""Tresca friction functional, boundary variational inequality and its solvers.

Discrete problem on boundary traces h (6 dofs per node of S)::

    J(h) = 1/2 h.A h + sum_i gamma_i |T_i h_u,i - T_i phi0_i| - ell.h,   h = 0 on fixed dofs

with gamma_i = w2_i g_i the lumped friction weight and T_i the (2, 3) tangent
frame. The multiplier lam_i (tangent coordinates, integrated over the nodal
patch) satisfies A h + J^T lam = ell on free dofs and |lam_i| <= gamma_i;
it equals minus the integrated tangential traction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .mesh import TraceMap
from .steklov import DtnOperator, RigidBasis

log = logging.getLogger(__name__)

KINDS = ("coercive_A0", "semicoercive_B0", "semicoercive_C0", "exterior_D0")


class VIError(RuntimeError):
    pass


class VIConvergenceError(VIError):
    def __init__(self, msg, history=None):
        self.history = history or []
        super().__init__(msg)


class NewtonStagnation(VIConvergenceError):
    """Semismooth Newton made no progress; Uzawa is the recommended fallback."""


class MarginError(VIError):
    def __init__(self, report):
        self.report = report
        super().__init__(f"solvability margin M = {report.margin:.6e} is not strictly positive")


@dataclass
class FrictionSpec:
    """Nodal friction data on the boundary nodes of a TraceMap (zeros off S2)."""

    g: np.ndarray
    phi0: np.ndarray
    F0: np.ndarray | None = None
    phi: np.ndarray | None = None
    coefficient: np.ndarray | None = None

    @classmethod
    def from_coulomb(cls, coefficient, F0, phi0, phi=None) -> FrictionSpec:
        coefficient = np.asarray(coefficient, dtype=float)
        F0 = np.asarray(F0, dtype=float)
        return cls(coefficient * np.abs(F0), np.asarray(phi0, dtype=float), F0, phi, coefficient)

    def validate(self, tm: TraceMap, tol: float = 1e-12) -> None:
        if np.any(self.g < 0):
            raise VIError("slip bound g must be nonnegative")
        if self.coefficient is not None and self.F0 is not None:
            if not np.allclose(self.g, self.coefficient * np.abs(self.F0), rtol=1e-14, atol=0):
                raise VIError("g differs from coefficient * |F0|")
        pn = np.abs(np.einsum("ij,ij->i", self.phi0, tm.normals))
        if np.any(pn > tol * np.maximum(np.linalg.norm(self.phi0, axis=1), 1e-300) + 1e-300):
            raise VIError("phi0 must be tangential")


def friction_functional(psi, fs: FrictionSpec, tm: TraceMap) -> float:
    """j(psi) = sum over S2 nodes of w2_i g_i |psi_s,i - phi0_i| (lumped rule).

    psi: (nb, 3) displacement traces, or a boundary vector with 6 dofs per node.
    """
    psi = np.asarray(psi, dtype=float)
    u = psi.reshape(tm.n, 6)[:, :3] if psi.size == 6 * tm.n else psi.reshape(tm.n, 3)
    us = u - np.einsum("ij,ij->i", u, tm.normals)[:, None] * tm.normals
    return float(np.sum(tm.w2 * fs.g * np.linalg.norm(us - fs.phi0, axis=1)))


@dataclass
class VIProblem:
    A: np.ndarray
    trace: TraceMap
    friction: FrictionSpec
    ell: np.ndarray
    kind: str = "coercive_A0"
    fixed: np.ndarray | None = None
    basis: RigidBasis | None = None
    operator: DtnOperator | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise VIError(f"unknown problem kind {self.kind!r}")
        tm = self.trace
        n = 6 * tm.n
        self.ell = np.asarray(self.ell, dtype=float)
        if self.fixed is None:
            self.fixed = np.zeros(n, dtype=bool)
        self.fixed = np.asarray(self.fixed, dtype=bool)
        if self.A.shape != (n, n) or self.ell.shape != (n,):
            raise VIError("operator/load dimensions do not match the trace map")
        self.friction.validate(tm)
        node_fixed = self.fixed.reshape(tm.n, 6)[:, :3].any(axis=1)
        gamma = tm.w2 * self.friction.g
        self.nodes = np.nonzero((gamma > 0) & ~node_fixed)[0]
        self.gamma = gamma[self.nodes]
        m = len(self.nodes)
        jm = np.zeros((2 * m, n))
        for k, i in enumerate(self.nodes):
            jm[2 * k : 2 * k + 2, 6 * i : 6 * i + 3] = tm.tangents[i]
        self.J = jm
        self.phi0t = np.einsum("kij,kj->ki", tm.tangents[self.nodes], self.friction.phi0[self.nodes]).ravel()
        if self.kind.startswith("semicoercive"):
            if self.fixed.any():
                raise VIError("semicoercive kinds have no Dirichlet part")
            if self.basis is None:
                raise VIError("semicoercive kinds need the rigid basis")
        elif self.kind == "coercive_A0" and not self.fixed.any():
            raise VIError("coercive interior problem needs a nonempty Dirichlet set")

    @property
    def free(self) -> np.ndarray:
        return np.nonzero(~self.fixed)[0]

    @property
    def semicoercive(self) -> bool:
        return self.kind.startswith("semicoercive")

    def slip(self, h) -> np.ndarray:
        """Tangential slip s_k = T_k h_u - T_k phi0 per friction node, (m, 2)."""
        return (self.J @ h - self.phi0t).reshape(-1, 2)

    def lam_ambient(self, lam) -> np.ndarray:
        out = np.zeros((self.trace.n, 3))
        if len(self.nodes):
            out[self.nodes] = np.einsum("kij,ki->kj", self.trace.tangents[self.nodes], np.asarray(lam).reshape(-1, 2))
        return out


def total_functional(h, prob: VIProblem, check: bool = True) -> float:
    h = np.asarray(h, dtype=float)
    if check and np.any(h[prob.fixed] != 0):
        raise VIError("trial field violates the Dirichlet constraint")
    return float(0.5 * h @ prob.A @ h + friction_functional(h, prob.friction, prob.trace) - prob.ell @ h)


@dataclass
class VIOptions:
    tol: float = 1e-9
    max_iter: int = 100_000
    rho: float | None = None
    solver: str = "uzawa"
    lam0: np.ndarray | None = None
    record_energy: bool = False
    accelerate: bool = False


@dataclass
class VISolution:
    h0: np.ndarray
    lam: np.ndarray
    lam_ambient: np.ndarray
    energy: float
    iterations: int
    residual: float
    solver: str
    converged: bool = True
    energies: list = field(default_factory=list)
    history: list = field(default_factory=list)
    interior: np.ndarray | None = None
    margin: object = None


def _project(lam, gamma):
    v = lam.reshape(-1, 2)
    nv = np.linalg.norm(v, axis=1)
    f = np.where(nv > gamma, gamma / np.maximum(nv, 1e-300), 1.0)
    return (v * f[:, None]).ravel()


def _shrink(v, t):
    v = v.reshape(-1, 2)
    nv = np.linalg.norm(v, axis=1)
    f = np.maximum(1.0 - t / np.maximum(nv, 1e-300), 0.0)
    return (v * f[:, None]).ravel()


class _Reduced:
    """Dual reduction of a coercive problem: h(lam) = h_l - H lam on free dofs."""

    def __init__(self, prob: VIProblem, a=None, ell=None):
        self.prob = prob
        self.F = prob.free
        a = prob.A if a is None else a
        self.ell = prob.ell if ell is None else ell
        aff = a[np.ix_(self.F, self.F)]
        try:
            self.cho = sla.cho_factor(aff)
        except np.linalg.LinAlgError as exc:
            raise VIError("boundary operator is not positive definite on the free dofs") from exc
        self.JF = prob.J[:, self.F]
        self.H = sla.cho_solve(self.cho, self.JF.T) if self.JF.size else np.zeros((len(self.F), 0))
        s = self.JF @ self.H
        self.S = 0.5 * (s + s.T)
        self.set_load(self.ell)

    def set_load(self, ell):
        self.ell = ell
        self.hl = sla.cho_solve(self.cho, ell[self.F])
        self.b = self.JF @ self.hl - self.prob.phi0t

    def h(self, lam):
        out = np.zeros(self.prob.A.shape[0])
        out[self.F] = self.hl - self.H @ lam
        return out

    def s(self, lam):
        return self.b - self.S @ lam

    def scale(self):
        return max(np.linalg.norm(self.b), np.linalg.norm(self.prob.phi0t), np.linalg.norm(self.JF @ self.hl), 1e-300)


def _energy_of(prob, h):
    return total_functional(h, prob, check=False)


def _uzawa_coercive(prob: VIProblem, opts: VIOptions, red: _Reduced | None = None) -> VISolution:
    red = red or _Reduced(prob)
    m2 = red.S.shape[0]
    lam = np.zeros(m2) if opts.lam0 is None else _project(np.asarray(opts.lam0, dtype=float), prob.gamma)
    if m2 == 0:
        h = red.h(lam)
        return VISolution(h, lam, prob.lam_ambient(lam), _energy_of(prob, h), 0, 0.0, "uzawa")
    lmax = float(np.linalg.eigvalsh(red.S)[-1])
    rho = opts.rho if opts.rho is not None else 1.0 / lmax
    adaptive = opts.rho is not None
    scale = red.scale()
    energies, hist = [], []
    prev_res = np.inf
    y, lam_prev, t = lam.copy(), lam.copy(), 1.0
    for it in range(1, opts.max_iter + 1):
        base = y if opts.accelerate else lam
        new = _project(base + rho * red.s(base), prob.gamma)
        res = np.linalg.norm(_project(lam + rho * red.s(lam), prob.gamma) - lam) / rho
        if adaptive and res > prev_res * (1 + 1e-12) and rho > 1e-12 / lmax:
            rho *= 0.5
        prev_res = res
        if opts.accelerate:
            if (new - lam) @ (lam - lam_prev) < 0:  # restart
                t = 1.0
            t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
            lam_prev, lam = lam, new
            y = lam + (t - 1) / t_new * (lam - lam_prev)
            t = t_new
        else:
            lam = new
        if opts.record_energy:
            energies.append(_energy_of(prob, red.h(lam)))
        if it % 100 == 1:
            hist.append((it, res / scale))
        if res <= opts.tol * scale:
            break
    else:
        raise VIConvergenceError(f"Uzawa did not converge in {opts.max_iter} iterations (residual {res / scale:.3e})", hist)
    res = np.linalg.norm(_project(lam + rho * red.s(lam), prob.gamma) - lam) / rho
    h = red.h(lam)
    return VISolution(h, lam, prob.lam_ambient(lam), _energy_of(prob, h), it, res / scale, "uzawa", True, energies, hist)


def _newton_coercive(prob: VIProblem, opts: VIOptions, red: _Reduced | None = None, lam0=None) -> VISolution:
    red = red or _Reduced(prob)
    m2 = red.S.shape[0]
    lam = np.zeros(m2) if lam0 is None else _project(np.asarray(lam0, dtype=float), prob.gamma)
    if m2 == 0:
        h = red.h(lam)
        return VISolution(h, lam, prob.lam_ambient(lam), _energy_of(prob, h), 1, 0.0, "semismooth")
    c = 1.0 / float(np.mean(np.diag(red.S)))
    gamma = prob.gamma
    scale = red.scale()
    eye = np.eye(m2)

    def resid(lv):
        return lv - _project(lv + c * red.s(lv), gamma)

    F = resid(lam)
    hist = []
    for it in range(1, 101):
        nres = np.linalg.norm(F) / c
        hist.append((it - 1, nres / scale))
        if nres <= opts.tol * scale:
            break
        z = (lam + c * red.s(lam)).reshape(-1, 2)
        dz = eye - c * red.S
        jac = np.empty((m2, m2))
        for k in range(len(gamma)):
            rows = slice(2 * k, 2 * k + 2)
            nz = np.linalg.norm(z[k])
            if nz <= gamma[k]:
                jac[rows] = eye[rows] - dz[rows]
            else:
                zh = z[k] / nz
                jac[rows] = eye[rows] - (gamma[k] / nz) * (np.eye(2) - np.outer(zh, zh)) @ dz[rows]
        try:
            step = np.linalg.solve(jac, -F)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(jac, -F, rcond=None)[0]
        theta = F @ F
        t = 1.0
        while t > 1e-10:
            cand = lam + t * step
            fc = resid(cand)
            if fc @ fc <= (1 - 1e-4 * t) * theta:
                break
            t *= 0.5
        else:
            raise NewtonStagnation("semismooth Newton line search failed; fall back to Uzawa", hist)
        lam, F = cand, fc
    else:
        raise NewtonStagnation("semismooth Newton did not converge in 100 steps; fall back to Uzawa", hist)
    h = red.h(lam)
    return VISolution(h, lam, prob.lam_ambient(lam), _energy_of(prob, h), max(it - 1, 1), nres / scale, "semismooth", True, [], hist)


def _require_margin(prob: VIProblem):
    from .solvability import check_necessary

    rep = getattr(prob, "margin_report", None)
    if rep is None:
        rep = prob.margin_report = check_necessary(prob)
    if not rep.strict:
        raise MarginError(rep)
    return rep


def _default_penalty(prob: VIProblem) -> float:
    idx = np.nonzero(np.abs(prob.J).sum(axis=0))[0]
    return float(np.mean(np.diag(prob.A)[idx])) if len(idx) else 1.0


def _alg2_semicoercive(prob: VIProblem, opts: VIOptions) -> VISolution:
    """Augmented-Lagrangian Uzawa: split z = J h - phi0, update the multiplier
    with step r; A + r J^T J is definite when the margin is strictly positive."""
    a, jm, gamma = prob.A, prob.J, prob.gamma
    r = opts.rho if opts.rho is not None else _default_penalty(prob)
    try:
        cho = sla.cho_factor(a + r * jm.T @ jm)
    except np.linalg.LinAlgError as exc:
        raise VIError("augmented operator is singular: friction does not control the rigid motions") from exc
    m2 = jm.shape[0]
    lam = np.zeros(m2) if opts.lam0 is None else _project(np.asarray(opts.lam0, dtype=float), gamma)
    z = np.zeros(m2)
    scale_s = max(np.linalg.norm(prob.phi0t), np.linalg.norm(jm @ sla.cho_solve(cho, prob.ell)), 1e-300)
    hist, energies = [], []
    for it in range(1, opts.max_iter + 1):
        h = sla.cho_solve(cho, prob.ell - jm.T @ lam + r * jm.T @ (z + prob.phi0t))
        v = jm @ h - prob.phi0t
        z_old = z
        z = _shrink(v + lam / r, gamma / r)
        lam = lam + r * (v - z)
        primal = np.linalg.norm(v - z)
        dual = np.linalg.norm(z - z_old)
        res = max(primal, dual)
        if opts.record_energy:
            energies.append(_energy_of(prob, h))
        if it % 100 == 1:
            hist.append((it, res / scale_s))
        if res <= opts.tol * scale_s:
            break
    else:
        raise VIConvergenceError(f"augmented Uzawa did not converge in {opts.max_iter} iterations (residual {res / scale_s:.3e})", hist)
    # final multiplier-consistent primal: solve the stationarity with the converged lam
    h = sla.cho_solve(cho, prob.ell - jm.T @ lam + r * jm.T @ (z + prob.phi0t))
    return VISolution(h, lam, prob.lam_ambient(lam), _energy_of(prob, h), it, res / scale_s, "uzawa", True, energies, hist)


def _prox_newton_semicoercive(prob: VIProblem, opts: VIOptions) -> VISolution:
    """Proximal point on the rigid coefficients, each step a coercive problem
    solved by semismooth Newton."""
    basis = prob.basis
    wb = basis.fields * basis.weights  # rows: W chi_k
    eps = 1e-2 * _default_penalty(prob)
    a_eps = prob.A + eps * wb.T @ wb
    red = _Reduced(prob, a=a_eps)
    c = np.zeros(6)
    lam = None if opts.lam0 is None else np.asarray(opts.lam0, dtype=float)
    total = 0
    hist = []
    scale = None
    inner = VIOptions(tol=max(1e-3 * opts.tol, 1e-14))
    for outer in range(1, 2001):
        red.set_load(prob.ell + eps * wb.T @ c)
        sol = _newton_coercive(prob, inner, red, lam)
        total += sol.iterations
        lam = sol.lam
        c_new = wb @ sol.h0
        scale = scale or max(np.linalg.norm(sol.h0), 1e-300)
        step = np.linalg.norm(c_new - c)
        hist.append((outer, step / scale))
        c = c_new
        if step <= opts.tol * scale:
            break
    else:
        raise NewtonStagnation("proximal Newton did not settle the rigid component", hist)
    h = sol.h0
    return VISolution(h, lam, prob.lam_ambient(lam), _energy_of(prob, h), total, step / scale, "semismooth", True, [], hist)


def solve_uzawa(prob: VIProblem, opts: VIOptions | None = None) -> VISolution:
    opts = opts or VIOptions()
    if prob.semicoercive:
        rep = _require_margin(prob)
        sol = _alg2_semicoercive(prob, opts)
        sol.margin = rep
        return sol
    return _uzawa_coercive(prob, opts)


def solve_semismooth(prob: VIProblem, opts: VIOptions | None = None) -> VISolution:
    opts = opts or VIOptions()
    if prob.semicoercive:
        rep = _require_margin(prob)
        sol = _prox_newton_semicoercive(prob, opts)
        sol.margin = rep
        return sol
    return _newton_coercive(prob, opts, lam0=opts.lam0)


def solve(prob: VIProblem, opts: VIOptions | None = None) -> VISolution:
    opts = opts or VIOptions()
    if opts.solver == "uzawa":
        return solve_uzawa(prob, opts)
    if opts.solver == "semismooth":
        try:
            return solve_semismooth(prob, opts)
        except NewtonStagnation as exc:
            log.warning("%s", exc)
            raise
    raise VIError(f"unknown solver {opts.solver!r}")


# ----------------------------------------------------------------------------
# optimality verification


@dataclass
class KKTReport:
    passed: bool
    checks: dict
    violations: dict
    max_violation: dict
    indeterminate: np.ndarray
    tol: float

    def lines(self) -> list[str]:
        out = []
        for name, ok in self.checks.items():
            bad = self.violations[name]
            out.append(f"{name:<22s} {'pass' if ok else 'FAIL'}  max={self.max_violation[name]:.3e}  nodes={list(bad)[:8]}")
        return out


def kkt_verify(sol: VISolution, prob: VIProblem, tol: float = 1e-7, n_probe: int = 100, seed: int = 0) -> KKTReport:
    """Nodewise discrete optimality checks; tolerances relative to the data scales."""
    h = np.asarray(sol.h0, dtype=float)
    lam = np.asarray(sol.lam, dtype=float).reshape(-1, 2)
    gamma = prob.gamma
    s = prob.slip(h)
    force = max(np.abs(prob.ell).max(initial=0.0), gamma.max(initial=0.0), np.abs(prob.A @ h).max(initial=0.0), 1e-300)
    disp = max(np.abs(h).max(initial=0.0), np.abs(prob.phi0t).max(initial=0.0), 1e-300)
    fd = max(force * disp, 1e-300)
    nl = np.linalg.norm(lam, axis=1)
    ns = np.linalg.norm(s, axis=1)
    viol, mx = {}, {}

    d1 = nl - gamma
    viol["dual_feasibility"] = prob.nodes[d1 > tol * force]
    mx["dual_feasibility"] = float(max(d1.max(initial=0.0), 0.0) / force)

    inner = nl < gamma - tol * force
    d2 = np.where(inner, ns, 0.0)
    viol["stick"] = prob.nodes[d2 > tol * disp]
    mx["stick"] = float(d2.max(initial=0.0) / disp)

    d3 = nl * ns - np.einsum("ki,ki->k", lam, s)
    slip_nodes = ns > tol * disp
    d3b = np.where(slip_nodes, np.abs(nl - gamma), 0.0)  # slipping nodes sit on the friction bound
    bad3 = (d3 > tol * fd) | (d3b > tol * force)
    viol["alignment"] = prob.nodes[bad3]
    mx["alignment"] = float(max(d3.max(initial=0.0) / fd, d3b.max(initial=0.0) / force))

    r = prob.A @ h + prob.J.T @ lam.ravel() - prob.ell
    r[prob.fixed] = 0.0
    rn = np.abs(r.reshape(-1, 6)).max(axis=1)
    viol["equilibrium"] = np.nonzero(rn > tol * force)[0]
    mx["equilibrium"] = float(rn.max(initial=0.0) / force)

    rng = np.random.default_rng(seed)
    free = ~prob.fixed
    j0 = total_functional(h, prob, check=False)
    worst = 0.0
    grad = prob.A @ h - prob.ell
    grad[prob.fixed] = 0.0
    probes = []
    for k in range(n_probe):
        d = rng.standard_normal(h.size) * free
        probes.append(d / max(np.linalg.norm(d), 1e-300))
    if np.linalg.norm(grad) > 0:
        probes.append(-(grad + prob.J.T @ lam.ravel()) / max(np.linalg.norm(grad), 1e-300))
        probes.append(-grad / np.linalg.norm(grad))
    vi_bad = []
    for k, d in enumerate(probes):
        for t in (1e-3, 1e-1, 1.0):
            step = t * disp * d
            # <A h, v - h> + j(v) - j(h) - ell(v - h) >= 0 with v = h + step
            val = grad @ step + (total_functional(h + step, prob, check=False) - j0 - 0.5 * step @ prob.A @ step - grad @ step)
            rel = -val / (fd * t)
            if rel > worst:
                worst = rel
            if rel > tol * np.sqrt(h.size):
                vi_bad.append(k)
                break
    viol["variational_ineq"] = np.array(sorted(set(vi_bad)), dtype=np.int64)
    mx["variational_ineq"] = float(worst)

    checks = {k: len(v) == 0 for k, v in viol.items()}
    s2 = np.nonzero(prob.trace.w2 > 0)[0]
    indet = np.setdiff1d(s2[prob.friction.g[s2] == 0], np.nonzero(prob.fixed.reshape(-1, 6)[:, 0])[0])
    return KKTReport(all(checks.values()), checks, viol, mx, indet, tol)
