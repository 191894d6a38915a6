"""P1 Galerkin discretization of the hemitropic energy form.

Every node carries six unknowns ordered (u0, u1, u2, w0, w1, w2); global dof
of component c at node i is 6*i + c.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .material import LEVI_CIVITA, MaterialParams, apply_equilibrium, quadratic_form_matrix, require_admissible, stress_operator
from .mesh import Mesh, TraceMap
from .quadrature import TET4_BARY, TET4_WEIGHTS, tet_rule, tri_rule

log = logging.getLogger(__name__)

DEFAULT_DIRECT_THRESHOLD = 200_000
_CHUNK = 4096


class FemError(RuntimeError):
    pass


class SingularSystemError(FemError):
    def __init__(self, msg: str, nullity: int):
        self.nullity = nullity
        super().__init__(f"{msg} (numerical null-space dimension {nullity})")


def element_geometry(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the barycentric shape functions (M, 4, 3) and volumes (M,)."""
    x = mesh.nodes[mesh.tets]
    d = x[:, 1:] - x[:, :1]
    vol = np.linalg.det(d) / 6.0
    g = np.empty((len(mesh.tets), 4, 3))
    g[:, 1:] = np.linalg.inv(d).transpose(0, 2, 1)
    g[:, 0] = -g[:, 1:].sum(axis=1)
    return g, vol


def strain_matrix(grads: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """Element strain operators (M, 18, 24): strain vector = B @ element dofs."""
    m = grads.shape[0]
    b = np.zeros((m, 18, 24))
    for a in range(4):
        for p in range(3):
            for q in range(3):
                b[:, 3 * p + q, 6 * a + q] += grads[:, a, p]
                b[:, 9 + 3 * p + q, 6 * a + 3 + q] += grads[:, a, p]
                for k in range(3):
                    if LEVI_CIVITA[p, q, k]:
                        b[:, 3 * p + q, 6 * a + 3 + k] -= LEVI_CIVITA[p, q, k] * bary[a]
    return b


def element_dofs(tets: np.ndarray) -> np.ndarray:
    return (6 * tets[:, :, None] + np.arange(6)).reshape(len(tets), 24)


@dataclass
class StiffnessMatrix:
    matrix: sp.csr_matrix
    n_elements: int
    quad_order: int = 2
    material: MaterialParams | None = field(default=None, repr=False)

    @property
    def shape(self):
        return self.matrix.shape


def _assemble(mesh: Mesh, elem_fn) -> sp.csr_matrix:
    n = 6 * mesh.n_nodes
    rows, cols, vals = [], [], []
    for start in range(0, len(mesh.tets), _CHUNK):
        sl = slice(start, start + _CHUNK)
        ke = elem_fn(sl)
        iu = np.triu_indices(24)
        ke[:, iu[1], iu[0]] = ke[:, iu[0], iu[1]]  # mirror for exact symmetry
        dofs = element_dofs(mesh.tets[sl])
        rows.append(np.repeat(dofs, 24, axis=1).ravel())
        cols.append(np.tile(dofs, (1, 24)).ravel())
        vals.append(ke.ravel())
    # accumulate duplicates in element order so (i, j) and (j, i) see identical sums
    key = np.concatenate(rows) * n + np.concatenate(cols)
    uniq, inv = np.unique(key, return_inverse=True)
    data = np.bincount(inv, weights=np.concatenate(vals), minlength=len(uniq))
    return sp.csr_matrix((data, (uniq // n, uniq % n)), shape=(n, n))


def assemble_stiffness(mesh: Mesh, p: MaterialParams) -> StiffnessMatrix:
    require_admissible(p)
    c = quadratic_form_matrix(p)
    grads, vol = element_geometry(mesh)

    def elem(sl):
        g, v = grads[sl], vol[sl]
        ke = np.zeros((len(v), 24, 24))
        for bary, w in zip(TET4_BARY, TET4_WEIGHTS):
            b = strain_matrix(g, bary)
            ke += (w * v)[:, None, None] * (b.transpose(0, 2, 1) @ (c @ b))
        return ke

    k = _assemble(mesh, elem)
    if (k - k.T).count_nonzero():
        raise FemError("assembled stiffness is not exactly symmetric")
    return StiffnessMatrix(k, len(mesh.tets), 2, p)


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    """Consistent L2 Gram matrix for 6-component P1 fields."""
    _, vol = element_geometry(mesh)
    local = (np.ones((4, 4)) + np.eye(4)) / 20.0
    ke6 = np.kron(local, np.eye(6))
    return _assemble(mesh, lambda sl: vol[sl, None, None] * ke6)


def assemble_h1(mesh: Mesh) -> sp.csr_matrix:
    """H1 Gram matrix (componentwise Laplacian plus mass)."""
    grads, vol = element_geometry(mesh)
    eye6 = np.eye(6)

    def elem(sl):
        lap = np.einsum("eap,ebp->eab", grads[sl], grads[sl]) * vol[sl, None, None]
        return np.einsum("eab,ij->eaibj", lap, eye6).reshape(-1, 24, 24)

    return _assemble(mesh, elem) + assemble_mass(mesh)


def rigid_field(coords: np.ndarray, a, b) -> np.ndarray:
    """Nodal values (N, 6) of the generalized rigid displacement ([a x X] + b, a)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    u = np.cross(a, coords) + b
    return np.hstack([u, np.broadcast_to(a, u.shape)])


def rigid_generators(coords: np.ndarray) -> np.ndarray:
    """Six rigid fields (6, N*6): three translations then three rotations."""
    e = np.eye(3)
    z = np.zeros(3)
    return np.array([rigid_field(coords, z, e[i]).ravel() for i in range(3)] + [rigid_field(coords, e[i], z).ravel() for i in range(3)])


# ----------------------------------------------------------------------------
# loads


@dataclass
class LoadData:
    """Per-node data arrays over all mesh nodes (zero off their support).

    X: (N, 6) body force and moment density; f: (N, 6) Dirichlet values on S1;
    F0: (N,) normal traction on S2; phi: (N, 3) couple traction on S2;
    Psi: (N, 6) traction on S1 (Neumann variant).
    """

    X: np.ndarray | None = None
    f: np.ndarray | None = None
    F0: np.ndarray | None = None
    phi: np.ndarray | None = None
    Psi: np.ndarray | None = None

    @classmethod
    def zeros(cls, n_nodes: int) -> LoadData:
        return cls(np.zeros((n_nodes, 6)), np.zeros((n_nodes, 6)), np.zeros(n_nodes), np.zeros((n_nodes, 3)), np.zeros((n_nodes, 6)))


def body_load_vector(mesh: Mesh, X) -> np.ndarray:
    if X is None:
        return np.zeros(6 * mesh.n_nodes)
    return assemble_mass(mesh) @ np.asarray(X, dtype=float).ravel()


def surface_load_vector(mesh: Mesh, tm: TraceMap, F0=None, phi=None, Psi=None, normals=None) -> np.ndarray:
    """Nodal (lumped) surface loads: w2*(F0 n, phi) on S2 and w1*Psi on S1.

    ``normals`` overrides the trace-map normals (used to flip orientation)."""
    out = np.zeros((mesh.n_nodes, 6))
    nb = tm.boundary_nodes
    nrm = tm.normals if normals is None else normals
    if F0 is not None:
        out[nb, :3] += (tm.w2 * np.asarray(F0)[nb])[:, None] * nrm
    if phi is not None:
        out[nb, 3:] += tm.w2[:, None] * np.asarray(phi)[nb]
    if Psi is not None:
        out[nb] += tm.w1[:, None] * np.asarray(Psi)[nb]
    return out.ravel()


def assemble_load(mesh: Mesh, loads: LoadData, tm: TraceMap) -> np.ndarray:
    return body_load_vector(mesh, loads.X) + surface_load_vector(mesh, tm, loads.F0, loads.phi, loads.Psi)


# ----------------------------------------------------------------------------
# linear solves


class Factor:
    """Factorization of a sparse SPD (or symmetric nonsingular) matrix with a
    diagonally preconditioned CG fallback for very large systems."""

    def __init__(self, a, direct_threshold: int = DEFAULT_DIRECT_THRESHOLD):
        self.a = sp.csc_matrix(a)
        self.n = self.a.shape[0]
        self.direct = self.n <= direct_threshold
        if self.direct:
            try:
                self._lu = spla.splu(self.a)
            except RuntimeError as exc:
                raise SingularSystemError(str(exc), numerical_nullity(self.a)) from exc
        else:
            d = self.a.diagonal()
            self._pc = spla.LinearOperator(self.a.shape, matvec=lambda x: x / d)

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self.n == 0:
            return b.copy()
        if self.direct:
            x = self._lu.solve(b)
        else:
            cols = b.reshape(self.n, -1)
            xs = []
            for j in range(cols.shape[1]):
                x, info = spla.cg(self.a, cols[:, j], rtol=1e-13, maxiter=20 * self.n, M=self._pc)
                if info != 0:
                    raise FemError(f"conjugate gradient did not converge (info={info})")
                xs.append(x)
            x = np.column_stack(xs).reshape(b.shape)
        if not np.all(np.isfinite(x)):
            raise SingularSystemError("non-finite solution", numerical_nullity(self.a))
        return x


def numerical_nullity(a, rel_tol: float = 1e-9, dense_limit: int = 4000) -> int:
    """Number of eigenvalues of the symmetric matrix ``a`` below rel_tol * max|eig|."""
    n = a.shape[0]
    if n == 0:
        return 0
    if n <= dense_limit:
        ev = np.linalg.eigvalsh(a.toarray() if sp.issparse(a) else np.asarray(a))
        return int(np.sum(ev <= rel_tol * np.abs(ev).max()))
    top = spla.eigsh(a, k=1, which="LA", return_eigenvectors=False)[0]
    shift = -1e-8 * top
    ev = spla.eigsh(sp.csc_matrix(a), k=min(12, n - 2), sigma=shift, which="LM", return_eigenvectors=False)
    return int(np.sum(ev <= rel_tol * top))


def solve_constrained(
    K,
    rhs,
    fixed_dofs=(),
    fixed_values=None,
    clamp_nodes=(),
    clamp_tangents=None,
    check_nullity: bool = False,
    direct_threshold: int = DEFAULT_DIRECT_THRESHOLD,
) -> np.ndarray:
    """Minimize 1/2 U.K U - rhs.U with prescribed dofs and nodewise u.n = 0.

    Dirichlet dofs are eliminated; clamped nodes are rotated to their tangent
    frame and the normal displacement is dropped.
    """
    k = K.matrix if isinstance(K, StiffnessMatrix) else K
    k = sp.csr_matrix(k)
    n = k.shape[0]
    fixed = np.asarray(fixed_dofs, dtype=np.int64)
    u = np.zeros(n)
    if len(fixed):
        u[fixed] = 0.0 if fixed_values is None else np.asarray(fixed_values, dtype=float)
    free_mask = np.ones(n, dtype=bool)
    free_mask[fixed] = False
    clamp_nodes = np.asarray(clamp_nodes, dtype=np.int64)
    if len(clamp_nodes) and len(fixed):
        overlap = np.isin(6 * clamp_nodes, fixed)
        clamp_nodes = clamp_nodes[~overlap]
        clamp_tangents = np.asarray(clamp_tangents)[~overlap]
    free = np.nonzero(free_mask)[0]
    loc = -np.ones(n, dtype=np.int64)
    loc[free] = np.arange(len(free))
    b = np.asarray(rhs, dtype=float) - k @ u
    kff = k[free][:, free]
    bf = b[free]
    if len(clamp_nodes):
        t = _clamp_basis(loc, clamp_nodes, clamp_tangents, len(free))
        kr = (t.T @ kff @ t).tocsc()
        kr = 0.5 * (kr + kr.T)
        br = t.T @ bf
    else:
        t = None
        kr, br = kff.tocsc(), bf
    if check_nullity:
        nul = numerical_nullity(kr)
        if nul:
            raise SingularSystemError("constrained system is singular", nul)
    y = Factor(kr, direct_threshold).solve(br)
    res = np.linalg.norm(kr @ y - br)
    scale = max(np.linalg.norm(br), abs(kr).max() * np.linalg.norm(y), 1e-300)
    if res > 1e-8 * scale:
        raise SingularSystemError(f"linear solve residual {res / scale:.2e} too large", numerical_nullity(kr))
    u[free] = y if t is None else t @ y
    return u


def _clamp_basis(loc, clamp_nodes, tangents, n_free):
    """Columns spanning free-dof fields with u . n = 0 at the clamped nodes."""
    d0 = loc[6 * clamp_nodes]
    dofs = set()
    for d in d0:
        dofs.update((d, d + 1, d + 2))
    plain = np.array(sorted(set(range(n_free)) - dofs), dtype=np.int64)
    rows = list(plain)
    cols = list(range(len(plain)))
    vals = [1.0] * len(plain)
    col = len(plain)
    for d, tp in zip(d0, tangents):
        for kk in range(2):
            for c in range(3):
                rows.append(d + c)
                cols.append(col)
                vals.append(tp[kk][c])
            col += 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_free, col))


def dirichlet_dofs(nodes) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=np.int64)
    return (6 * nodes[:, None] + np.arange(6)).ravel()


def solve_linear_mixed(K, rhs, dirichlet_nodes, dirichlet_values=None, direct_threshold=DEFAULT_DIRECT_THRESHOLD) -> np.ndarray:
    """Mixed problem: all six components prescribed at ``dirichlet_nodes``
    (values (len, 6), default zero), natural conditions elsewhere."""
    dirichlet_nodes = np.asarray(dirichlet_nodes, dtype=np.int64)
    if len(dirichlet_nodes) == 0:
        raise FemError("mixed problem needs a nonempty Dirichlet set")
    vals = None if dirichlet_values is None else np.asarray(dirichlet_values, dtype=float).ravel()
    return solve_constrained(K, rhs, dirichlet_dofs(dirichlet_nodes), vals, direct_threshold=direct_threshold)


def solve_aux_normal_clamped(K, rhs, clamp_nodes, clamp_normals, fixed_dofs=(), fixed_values=None, direct_threshold=DEFAULT_DIRECT_THRESHOLD) -> np.ndarray:
    """u.n = 0 at each clamped node, natural (zero tangential traction and couple)
    conditions otherwise. Fails with the null-space dimension when singular."""
    from .mesh import tangent_pair

    tangents = np.array([tangent_pair(n) for n in np.asarray(clamp_normals).reshape(-1, 3)])
    return solve_constrained(K, rhs, fixed_dofs, fixed_values, clamp_nodes, tangents, check_nullity=True, direct_threshold=direct_threshold)


# ----------------------------------------------------------------------------
# manufactured fields and Green's identity


@dataclass
class QuadraticField:
    """Analytic field U(x) = c + G^T x + 1/2 (x.H_q x)_q for u and omega.

    grad convention: grad[p, q] = d_p U_q.
    """

    cu: np.ndarray
    gu: np.ndarray
    hu: np.ndarray
    cw: np.ndarray
    gw: np.ndarray
    hw: np.ndarray

    @classmethod
    def random(cls, rng, degree: int = 2, scale: float = 1.0) -> QuadraticField:
        def h():
            if degree < 2:
                return np.zeros((3, 3, 3))
            m = rng.standard_normal((3, 3, 3))
            return scale * 0.5 * (m + m.transpose(1, 0, 2))

        g = (lambda: scale * rng.standard_normal((3, 3))) if degree >= 1 else (lambda: np.zeros((3, 3)))
        return cls(scale * rng.standard_normal(3), g(), h(), scale * rng.standard_normal(3), g(), h())

    @classmethod
    def rigid(cls, a, b) -> QuadraticField:
        a = np.asarray(a, dtype=float)
        skew = np.einsum("qip,i->pq", LEVI_CIVITA, a)  # d_p (a x x)_q
        z = np.zeros((3, 3, 3))
        return cls(np.asarray(b, dtype=float), skew, z, a.copy(), np.zeros((3, 3)), z)

    def values(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        u = self.cu + x @ self.gu + 0.5 * np.einsum("ni,ijq,nj->nq", x, self.hu, x)
        w = self.cw + x @ self.gw + 0.5 * np.einsum("ni,ijq,nj->nq", x, self.hw, x)
        return np.hstack([u, w])

    def grads(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_2d(x)
        return self.gu + np.einsum("ni,ipq->npq", x, self.hu), self.gw + np.einsum("ni,ipq->npq", x, self.hw)

    def strain_vectors(self, x) -> np.ndarray:
        gu, gw = self.grads(x)
        om = self.values(x)[:, 3:]
        upq = gu - np.einsum("pqk,nk->npq", LEVI_CIVITA, om)
        return np.concatenate([upq.reshape(-1, 9), gw.reshape(-1, 9)], axis=1)

    def equilibrium(self, x, p: MaterialParams) -> np.ndarray:
        """L(d)U at points x (N, 6)."""
        gu, gw = self.grads(x)
        om = self.values(x)[:, 3:]
        return np.array([apply_equilibrium(self.hu, self.hw, gu[i], gw[i], p, om[i]) for i in range(len(gu))])

    def traction(self, x, p: MaterialParams, n) -> np.ndarray:
        gu, gw = self.grads(x)
        om = self.values(x)[:, 3:]
        n = np.broadcast_to(n, (len(gu), 3))
        return np.array([stress_operator(gu[i], gw[i], om[i], p, n[i]) for i in range(len(gu))])


def greens_residual(mesh: Mesh, p: MaterialParams, U: QuadraticField, V: np.ndarray, boundary_rule: str = "exact") -> float:
    """|int (L U . V + E(U, V)) dx - int_S T U . V dS| for analytic U and nodal P1 V.

    boundary_rule 'exact' integrates the boundary pairing with a degree-3 rule on
    flat triangles; 'nodal' uses the lumped nodal rule of the friction layer.
    """
    V = np.asarray(V, dtype=float).reshape(mesh.n_nodes, 6)
    c = quadratic_form_matrix(p)
    grads, vol = element_geometry(mesh)
    bary, wq = tet_rule(4)
    vol_int = 0.0
    xe = mesh.nodes[mesh.tets]
    dofs = element_dofs(mesh.tets)
    ve = V.ravel()[dofs]
    for lq, w in zip(bary, wq):
        xq = np.einsum("a,eai->ei", lq, xe)
        su = U.strain_vectors(xq)
        b = strain_matrix(grads, lq)
        sv = np.einsum("eij,ej->ei", b, ve)
        vq = np.einsum("a,eai->ei", lq, V[mesh.tets])
        lu = U.equilibrium(xq, p)
        vol_int += np.sum(w * vol * (np.einsum("ei,ij,ej->e", su, c, sv) + np.einsum("ei,ei->e", lu, vq)))
    nrm, area = mesh.tri_normals()
    xt = mesh.nodes[mesh.btris]
    surf = 0.0
    if boundary_rule == "exact":
        tb, tw = tri_rule(3)
        for lq, w in zip(tb, tw):
            xq = np.einsum("a,eai->ei", lq, xt)
            vq = np.einsum("a,eai->ei", lq, V[mesh.btris])
            tq = np.array([U.traction(xq[i : i + 1], p, nrm[i])[0] for i in range(len(xq))])
            surf += np.sum(w * area * np.einsum("ei,ei->e", tq, vq))
    elif boundary_rule == "nodal":
        for a in range(3):
            idx = mesh.btris[:, a]
            tq = np.array([U.traction(mesh.nodes[idx[i] : idx[i] + 1], p, nrm[i])[0] for i in range(len(idx))])
            surf += np.sum(area / 3 * np.einsum("ei,ei->e", tq, V[idx]))
    else:
        raise ValueError(f"unknown boundary rule {boundary_rule!r}")
    return float(abs(vol_int - surf))


def korn_constants(K, mass, h1) -> tuple[float, float]:
    """(c1, c2) with U.K U >= c1 |U|_H1^2 - c2 |U|_L2^2 on the discrete space."""
    k = (K.matrix if isinstance(K, StiffnessMatrix) else K).toarray()
    m = mass.toarray() if sp.issparse(mass) else np.asarray(mass)
    h = h1.toarray() if sp.issparse(h1) else np.asarray(h1)
    lo = sla.eigh(k, m, eigvals_only=True, subset_by_index=[0, 0])[0]
    c2 = max(0.0, -lo) + 1.0
    c1 = sla.eigh(k + c2 * m, h, eigvals_only=True, subset_by_index=[0, 0])[0]
    if c1 <= 0:
        raise FemError(f"Korn constant c1 = {c1:.3e} is not positive")
    return float(c1), float(c2)


def l2_error(mesh: Mesh, U_nodal, exact: QuadraticField) -> float:
    """L2 norm of (P1 field - analytic field), by a degree-4 rule per tet."""
    U_nodal = np.asarray(U_nodal, dtype=float).reshape(mesh.n_nodes, 6)
    _, vol = element_geometry(mesh)
    bary, wq = tet_rule(4)
    xe = mesh.nodes[mesh.tets]
    ue = U_nodal[mesh.tets]
    tot = 0.0
    for lq, w in zip(bary, wq):
        d = np.einsum("a,eai->ei", lq, ue) - exact.values(np.einsum("a,eai->ei", lq, xe))
        tot += np.sum(w * vol * np.einsum("ei,ei->e", d, d))
    return float(np.sqrt(tot))
