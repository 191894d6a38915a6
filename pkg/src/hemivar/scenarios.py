"""Problem families A (mixed), B (friction on all of S), C (traction on S1) and
D (exterior), reduced to boundary variational inequalities.

Each run splits the field as W = U0 + U: U0 solves a linear auxiliary problem
carrying the body force and the Dirichlet data, U = G h0 is the discrete
harmonic extension of the solution h0 of the boundary inequality.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .fem import (
    DEFAULT_DIRECT_THRESHOLD,
    StiffnessMatrix,
    assemble_h1,
    assemble_stiffness,
    body_load_vector,
    dirichlet_dofs,
    solve_aux_normal_clamped,
    solve_constrained,
    solve_linear_mixed,
    surface_load_vector,
)
from .friction_vi import FrictionSpec, KKTReport, VIOptions, VIProblem, VISolution, kkt_verify, solve
from .material import MaterialParams, require_admissible
from .mesh import Mesh, TraceMap, build_trace_map
from .steklov import DtnOperator, apply_reconstruct, build_dtn

log = logging.getLogger(__name__)

SCENARIO_KINDS = ("A", "B", "C", "D")
D_VARIANTS = ("dirichlet", "friction_only", "neumann")


class ScenarioError(ValueError):
    pass


@dataclass
class ScenarioData:
    """Input data as per-node arrays over all mesh nodes.

    X_tilde: (N, 6) specific body force and moment (X = rho * X_tilde);
    f: (N, 6) Dirichlet data on S1; Psi: (N, 6) traction on S1;
    F0: (N,) normal traction and phi: (N, 3) couple traction on S2;
    friction: (N,) Coulomb coefficient; g: optional explicit slip bound
    overriding friction * |F0|.
    """

    kind: str
    material: MaterialParams
    mesh: Mesh
    X_tilde: np.ndarray | None = None
    f: np.ndarray | None = None
    Psi: np.ndarray | None = None
    F0: np.ndarray | None = None
    phi: np.ndarray | None = None
    friction: np.ndarray | None = None
    g: np.ndarray | None = None
    variant: str = "dirichlet"

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ScenarioError(f"unknown scenario kind {self.kind!r}")
        if self.kind == "D":
            if self.variant not in D_VARIANTS:
                raise ScenarioError(f"unknown exterior variant {self.variant!r}")
            if self.mesh.region != "exterior_truncated":
                raise ScenarioError("kind D needs a truncated exterior mesh")
        elif self.mesh.region != "interior":
            raise ScenarioError(f"kind {self.kind} needs an interior mesh")
        n = self.mesh.n_nodes

        def arr(v, shape):
            return np.zeros(shape) if v is None else np.asarray(v, dtype=float).reshape(shape)

        self.X_tilde = arr(self.X_tilde, (n, 6))
        self.f = arr(self.f, (n, 6))
        self.Psi = arr(self.Psi, (n, 6))
        self.F0 = arr(self.F0, (n,))
        self.phi = arr(self.phi, (n, 3))
        self.friction = arr(self.friction, (n,))
        if self.g is not None:
            self.g = arr(self.g, (n,))
        if np.any(self.friction < 0):
            raise ScenarioError("friction coefficient must be nonnegative")
        has_s1 = np.any(self.mesh.btags == "S1")
        if self.kind == "B" and has_s1:
            raise ScenarioError("kind B has no S1 part; tag the whole contact surface S2")
        if self.kind in ("A", "C") and not has_s1:
            raise ScenarioError(f"kind {self.kind} needs a nonempty S1 part")
        if self.kind == "D" and self.variant == "friction_only" and has_s1:
            raise ScenarioError("exterior friction_only variant has no S1 part")

    @property
    def dirichlet(self) -> bool:
        return self.kind == "A" or (self.kind == "D" and self.variant == "dirichlet")

    @property
    def neumann(self) -> bool:
        return self.kind == "C" or (self.kind == "D" and self.variant == "neumann")

    def slip_bound(self) -> np.ndarray:
        g = self.friction * np.abs(self.F0) if self.g is None else self.g
        if np.any(g < 0):
            raise ScenarioError("slip bound g must be nonnegative")
        return g


@dataclass
class Prepared:
    """Data-independent pieces of a run (stiffness, trace map, operator, aux solve)."""

    K: StiffnessMatrix
    trace: TraceMap
    dtn: DtnOperator
    U0: np.ndarray
    reaction: np.ndarray
    body: np.ndarray
    key: tuple = ()


@dataclass
class ScenarioResult:
    h0: np.ndarray
    W: np.ndarray
    U0: np.ndarray
    kkt: KKTReport
    solution: VISolution
    problem: VIProblem
    prepared: Prepared = field(repr=False)
    residual: dict = field(default_factory=dict)
    margin: object = None

    @property
    def field(self) -> np.ndarray:
        return self.W.reshape(-1, 6)


def _op_kind(sd: ScenarioData) -> str:
    return "exterior_minus" if sd.kind == "D" else "interior_plus"


def _s1_only_nodes(tm: TraceMap) -> np.ndarray:
    return tm.boundary_nodes[tm.is_s1]


def prepare(sd: ScenarioData, direct_threshold: int = DEFAULT_DIRECT_THRESHOLD, prepared: Prepared | None = None) -> Prepared:
    """Assemble, build the boundary operator and solve the auxiliary problem."""
    require_admissible(sd.material)
    key = (sd.kind, sd.variant, sd.X_tilde.tobytes(), sd.f.tobytes())
    if prepared is not None and prepared.key == key:
        return prepared
    mesh = sd.mesh
    if prepared is not None:
        K, tm, dtn = prepared.K, prepared.trace, prepared.dtn
    else:
        K = assemble_stiffness(mesh, sd.material)
        tm = build_trace_map(mesh)
        dtn = build_dtn(K, mesh, _op_kind(sd), tm, direct_threshold)
    body = body_load_vector(mesh, sd.material.body_load(sd.X_tilde))
    far = dirichlet_dofs(tm.far_nodes)
    if sd.dirichlet:
        s1 = _s1_only_nodes(tm)
        if len(s1) == 0:
            raise ScenarioError("Dirichlet part S1 is empty")
        dofs = np.concatenate([dirichlet_dofs(s1), far])
        vals = np.concatenate([sd.f[s1].ravel(), np.zeros(len(far))])
        U0 = solve_constrained(K, body, dofs, vals, direct_threshold=direct_threshold)
    elif sd.kind in ("B", "C"):
        clamp = tm.is_s2
        U0 = solve_aux_normal_clamped(K, body, tm.boundary_nodes[clamp], tm.normals[clamp], direct_threshold=direct_threshold)
    else:  # exterior without Dirichlet part: natural conditions on S, zero at FAR
        U0 = solve_constrained(K, body, far, None, direct_threshold=direct_threshold)
    reaction = K.matrix @ U0 - body
    return Prepared(K, tm, dtn, U0, reaction, body, key)


def build_problem(sd: ScenarioData, prep: Prepared) -> tuple[VIProblem, np.ndarray]:
    """Boundary inequality for U = W - U0; returns the problem and the full
    surface load vector (nodal, all mesh dofs)."""
    tm = prep.trace
    nb = tm.boundary_nodes
    # Exterior data are tractions for the normal pointing away from the body;
    # the annulus' own outward normal is the opposite one, so the applied
    # couple and S1 traction change sign while F0 keeps its meaning along it.
    ext = sd.kind == "D"
    phi = -sd.phi if ext else sd.phi
    Psi = None
    if sd.neumann:
        Psi = -sd.Psi if ext else sd.Psi
    surf = surface_load_vector(sd.mesh, tm, sd.F0, phi, Psi)
    bd = tm.global_dofs()
    # reaction of the auxiliary field acts only where it was constrained
    ell = surf[bd] - _aux_reaction_on_s(sd, prep)
    g = sd.slip_bound()[nb]
    u0 = prep.U0.reshape(-1, 6)[nb, :3]
    u0s = u0 - np.einsum("ij,ij->i", u0, tm.normals)[:, None] * tm.normals
    phi0 = np.where((tm.w2 > 0)[:, None], -u0s, 0.0)
    fs = FrictionSpec(g, phi0, sd.F0[nb], phi[nb], sd.friction[nb] if sd.g is None else None)
    fixed = np.zeros(6 * tm.n, dtype=bool)
    if sd.dirichlet:
        fixed[tm.dofs(np.nonzero(tm.is_s1)[0])] = True
    kind = {"A": "coercive_A0", "B": "semicoercive_B0", "C": "semicoercive_C0", "D": "exterior_D0"}[sd.kind]
    basis = prep.dtn.kernel_basis if kind.startswith("semicoercive") else None
    prob = VIProblem(prep.dtn.matrix, tm, fs, ell, kind, fixed, basis, prep.dtn)
    return prob, surf


def _aux_reaction_on_s(sd: ScenarioData, prep: Prepared) -> np.ndarray:
    """Nodal reaction of U0 on the dofs of S that stay free in the inequality."""
    r = prep.reaction[prep.trace.global_dofs()].copy()
    if sd.dirichlet:
        r[np.repeat(prep.trace.is_s1, 6)] = 0.0  # eliminated anyway
    return r


def derived_psi(sd: ScenarioData, prep: Prepared) -> np.ndarray:
    """psi = F0 - tau_n(U0) on S2 nodes (boundary-node array)."""
    tm = prep.trace
    r = prep.reaction.reshape(-1, 6)[tm.boundary_nodes, :3]
    rn = np.einsum("ij,ij->i", r, tm.normals)
    w = np.where(tm.w2 > 0, tm.w2, 1.0)
    return np.where(tm.w2 > 0, sd.F0[tm.boundary_nodes] - rn / w, 0.0)


def solve_scenario(sd: ScenarioData, opts: VIOptions | None = None, prepared: Prepared | None = None, kkt_tol: float = 1e-7, direct_threshold: int = DEFAULT_DIRECT_THRESHOLD) -> ScenarioResult:
    opts = opts or VIOptions()
    prep = prepare(sd, direct_threshold, prepared)
    prob, _ = build_problem(sd, prep)
    sol = solve(prob, opts)
    U = apply_reconstruct(prep.dtn, sol.h0)
    W = prep.U0 + U
    sol.interior = W
    rep = kkt_verify(sol, prob, kkt_tol)
    res = ScenarioResult(sol.h0, W, prep.U0, rep, sol, prob, prep, margin=sol.margin)
    res.residual = manufactured_residual(sd, res)
    return res


def manufactured_residual(sd: ScenarioData, res: ScenarioResult) -> dict:
    """Boundary conditions of the original problem recomputed from W through the
    stiffness residual; values are maxima in traction (or displacement) units."""
    prep = res.prepared
    tm = prep.trace
    nb = tm.boundary_nodes
    _, surf = build_problem(sd, prep)
    r = (prep.K.matrix @ res.W - prep.body).reshape(-1, 6)[nb]
    load = surf.reshape(-1, 6)[nb]
    w = tm.weights
    n = tm.normals
    active = ~tm.is_s1 if sd.dirichlet else np.ones(tm.n, dtype=bool)
    d = (r - load)[active]
    wa = w[active]
    dn = np.abs(np.einsum("ij,ij->i", d[:, :3], n[active])) / wa
    dw = np.linalg.norm(d[:, 3:], axis=1) / wa
    ds = d[:, :3] - np.einsum("ij,ij->i", d[:, :3], n[active])[:, None] * n[active]
    bound = tm.w2[active] * sd.slip_bound()[nb][active]
    excess = np.maximum(np.linalg.norm(ds, axis=1) - bound, 0.0) / wa
    out = {
        "normal_traction": float(dn.max(initial=0.0)),
        "couple_traction": float(dw.max(initial=0.0)),
        "friction_bound_excess": float(excess.max(initial=0.0)),
    }
    if sd.dirichlet:
        s1 = _s1_only_nodes(tm)
        out["dirichlet"] = float(np.abs(res.W.reshape(-1, 6)[s1] - sd.f[s1]).max(initial=0.0))
    scale = max(np.abs(load).max(initial=0.0) / max(w.min(), 1e-300), np.abs(r).max(initial=0.0) / max(w.min(), 1e-300), 1e-300)
    out["traction_scale"] = float(scale)
    return out


# ----------------------------------------------------------------------------
# data dependence


@dataclass
class LipschitzRow:
    t: float
    data_norm: float
    diff_norm: float
    ratio: float | None


def data_norms(prep: Prepared, dg, dF0, dphi) -> tuple[float, float, float]:
    tm = prep.trace
    nb = tm.boundary_nodes
    w2 = tm.w2
    ng = float(np.sqrt(np.sum(w2 * np.asarray(dg)[nb] ** 2)))
    nf = float(np.sqrt(np.sum(w2 * np.asarray(dF0)[nb] ** 2)))
    v = np.zeros((tm.n, 6))
    v[:, 3:] = np.where((w2 > 0)[:, None], np.asarray(dphi)[nb], 0.0)
    npsi = prep.dtn.norm_minus_half(v.ravel())
    return ng, nf, npsi


def lipschitz_experiment(sd: ScenarioData, perturbations, opts: VIOptions | None = None, direct_threshold: int = DEFAULT_DIRECT_THRESHOLD) -> list[LipschitzRow]:
    """Solve the base problem and each perturbed one; ratio = |W - W~|_H1 / |delta data|.

    perturbations: iterable of (t, dg, dF0, dphi); the perturbed slip bound is
    g + dg with g the base bound, so dg and dF0 are independent.
    """
    if sd.kind != "A":
        raise ScenarioError("the data-dependence experiment is defined for kind A")
    opts = opts or VIOptions()
    base_g = sd.slip_bound()
    base = solve_scenario(sd, opts, direct_threshold=direct_threshold)
    prep = base.prepared
    h1 = assemble_h1(sd.mesh)
    rows = []
    for t, dg, dF0, dphi in perturbations:
        dg = np.asarray(dg, dtype=float)
        dF0 = np.asarray(dF0, dtype=float)
        dphi = np.asarray(dphi, dtype=float)
        pert = replace(sd, g=np.maximum(base_g + dg, 0.0), F0=sd.F0 + dF0, phi=sd.phi + dphi)
        r = solve_scenario(pert, opts, prepared=prep, direct_threshold=direct_threshold)
        dW = r.W - base.W
        diff = float(np.sqrt(max(dW @ (h1 @ dW), 0.0)))
        dn = float(sum(data_norms(prep, dg, dF0, dphi)))
        rows.append(LipschitzRow(float(t), dn, diff, diff / dn if dn > 0 else None))
    return rows


def scaled_family(direction, exponents=range(0, 9)):
    """Perturbation family t * direction for t = 2^-k."""
    dg, dF0, dphi = direction
    return [(2.0**-k, 2.0**-k * np.asarray(dg), 2.0**-k * np.asarray(dF0), 2.0**-k * np.asarray(dphi)) for k in exponents]
