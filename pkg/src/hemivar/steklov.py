"""Discrete Steklov-Poincare (Dirichlet-to-Neumann) operators.

The boundary operator is the Schur complement of the stiffness matrix onto the
dofs of the contact surface S. For truncated exterior meshes the FAR nodes are
held at zero, which approximates the decay at infinity.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .fem import DEFAULT_DIRECT_THRESHOLD, Factor, FemError, StiffnessMatrix, rigid_field
from .mesh import Mesh, TraceMap, build_trace_map

KINDS = ("interior_plus", "exterior_minus")
_MAGIC = b"DTN1"


class SteklovError(RuntimeError):
    pass


@dataclass
class RigidBasis:
    """Six boundary rigid fields, orthonormal in the lumped boundary L2 product."""

    fields: np.ndarray  # (6, 6 * nb)
    weights: np.ndarray  # lumped boundary L2 weight per boundary dof

    def gram(self) -> np.ndarray:
        return (self.fields * self.weights) @ self.fields.T

    def coefficients(self, h) -> np.ndarray:
        return self.fields @ (self.weights * np.asarray(h))

    def combine(self, c) -> np.ndarray:
        return np.asarray(c) @ self.fields


def rigid_basis(mesh_or_tm, normalize: bool = True) -> RigidBasis:
    tm = mesh_or_tm if isinstance(mesh_or_tm, TraceMap) else build_trace_map(mesh_or_tm)
    x = tm.coords
    e = np.eye(3)
    z = np.zeros(3)
    raw = np.array([rigid_field(x, z, e[i]).ravel() for i in range(3)] + [rigid_field(x, e[i], z).ravel() for i in range(3)])
    w = tm.mass_diag()
    g = (raw * w) @ raw.T
    ev = np.linalg.eigvalsh(g)
    if ev[0] <= 1e-10 * ev[-1]:
        raise SteklovError("degenerate boundary geometry: rigid traces are linearly dependent")
    if not normalize:
        return RigidBasis(raw, w)
    low = np.linalg.cholesky(g)
    return RigidBasis(sla.solve_triangular(low, raw, lower=True), w)


def project_P(h, basis: RigidBasis) -> tuple[np.ndarray, np.ndarray]:
    """Split h = Ph + Qh with Ph rigid and Qh boundary-L2 orthogonal to rigid traces."""
    h = np.asarray(h, dtype=float)
    ph = basis.combine(basis.coefficients(h))
    return ph, h - ph


@dataclass
class DtnOperator:
    matrix: np.ndarray
    kind: str
    trace: TraceMap
    stiffness: StiffnessMatrix = field(repr=False)
    boundary_dofs: np.ndarray = field(repr=False)
    interior_dofs: np.ndarray = field(repr=False)
    factor: Factor | None = field(default=None, repr=False)
    kernel_basis: RigidBasis | None = None
    coercivity_c: float = float("nan")
    raw_asymmetry: float = 0.0

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def energy(self, h, h2=None) -> float:
        h = np.asarray(h)
        return float(h @ self.matrix @ (h if h2 is None else np.asarray(h2)))

    def norm_half(self, h) -> float:
        """Discrete H^{1/2}(S) surrogate: sqrt(<Ah, h> + |h|^2_{L2(S)})."""
        h = np.asarray(h)
        w = self.trace.mass_diag()
        return float(np.sqrt(max(h @ self.matrix @ h, 0.0) + h @ (w * h)))

    def norm_minus_half(self, phi_dofs) -> float:
        """Dual surrogate norm of a boundary density: sup <W phi, h> / |h|_{1/2}."""
        w = self.trace.mass_diag()
        r = w * np.asarray(phi_dofs)
        return float(np.sqrt(r @ np.linalg.solve(self.matrix + np.diag(w), r)))


def build_dtn(K: StiffnessMatrix, mesh: Mesh, kind: str = "interior_plus", tm: TraceMap | None = None, direct_threshold: int = DEFAULT_DIRECT_THRESHOLD, with_coercivity: bool = True) -> DtnOperator:
    if kind not in KINDS:
        raise ValueError(f"unknown operator kind {kind!r}")
    if kind == "exterior_minus" and mesh.region != "exterior_truncated":
        raise SteklovError("exterior operator needs a truncated exterior mesh with a FAR boundary")
    if kind == "interior_plus" and mesh.region != "interior":
        raise SteklovError("interior operator needs an interior mesh")
    tm = tm or build_trace_map(mesh)
    kmat = sp.csr_matrix(K.matrix)
    bdofs = tm.global_dofs()
    excluded = np.zeros(kmat.shape[0], dtype=bool)
    excluded[bdofs] = True
    for i in tm.far_nodes:
        excluded[6 * i : 6 * i + 6] = True
    idofs = np.nonzero(~excluded)[0]
    kbb = kmat[bdofs][:, bdofs].toarray()
    kib = kmat[idofs][:, bdofs].toarray()
    fac = None
    if len(idofs):
        try:
            fac = Factor(kmat[idofs][:, idofs], direct_threshold)
        except FemError as exc:
            raise SteklovError(f"interior block is singular: {exc}") from exc
        a = kbb - kib.T @ fac.solve(kib)
    else:
        a = kbb
    scale = np.abs(a).max()
    asym = float(np.abs(a - a.T).max() / scale) if scale > 0 else 0.0
    a = 0.5 * (a + a.T)
    basis = rigid_basis(tm) if kind == "interior_plus" else None
    d = DtnOperator(a, kind, tm, K, bdofs, idofs, fac, basis, float("nan"), asym)
    if with_coercivity:
        d.coercivity_c = coercivity_estimate(d, basis)
    return d


def apply_reconstruct(d: DtnOperator, h) -> np.ndarray:
    """Discrete harmonic extension: full nodal vector with trace h on S, zero at
    FAR nodes, and K_ii x_i = -K_ib h inside."""
    h = np.asarray(h, dtype=float)
    n = d.stiffness.shape[0]
    out = np.zeros(n)
    out[d.boundary_dofs] = h
    if len(d.interior_dofs):
        kmat = d.stiffness.matrix
        rhs = -(kmat[d.interior_dofs][:, d.boundary_dofs] @ h)
        out[d.interior_dofs] = d.factor.solve(rhs)
    return out


def complement_basis(basis: RigidBasis) -> np.ndarray:
    """Columns spanning the boundary-L2 orthogonal complement of the rigid traces."""
    s = np.sqrt(basis.weights)
    bs = basis.fields * s
    _, _, vt = np.linalg.svd(bs, full_matrices=True)
    return vt[6:].T / s[:, None]


def coercivity_estimate(d: DtnOperator, basis: RigidBasis | None = None) -> float:
    """Largest c with <Ah, h> >= c |h - Ph|^2_{1/2}; for the exterior operator,
    the same bound over all boundary fields."""
    a = d.matrix
    w = d.trace.mass_diag()
    if d.kind == "interior_plus":
        basis = basis or d.kernel_basis
        z = complement_basis(basis)
        az = z.T @ a @ z
        nz = az + (z.T * w) @ z
    else:
        az, nz = a, a + np.diag(w)
    az = 0.5 * (az + az.T)
    nz = 0.5 * (nz + nz.T)
    return float(sla.eigh(az, nz, eigvals_only=True, subset_by_index=[0, 0])[0])


def dump_dtn(d: DtnOperator, path) -> None:
    """Binary dump: magic, int64 (n, k), row-major float64 A, then k basis rows."""
    basis = d.kernel_basis.fields if d.kernel_basis is not None else np.zeros((0, d.n))
    buf = _MAGIC + struct.pack("<qq", d.n, basis.shape[0])
    buf += np.ascontiguousarray(d.matrix, dtype="<f8").tobytes()
    buf += np.ascontiguousarray(basis, dtype="<f8").tobytes()
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(buf)
    tmp.replace(path)


def load_dtn_arrays(path) -> tuple[np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise SteklovError(f"{path}: not a DTN1 file")
    n, k = struct.unpack("<qq", raw[4:20])
    need = 20 + 8 * (n * n + k * n)
    if len(raw) != need:
        raise SteklovError(f"{path}: expected {need} bytes, found {len(raw)}")
    a = np.frombuffer(raw, dtype="<f8", count=n * n, offset=20).reshape(n, n).copy()
    b = np.frombuffer(raw, dtype="<f8", count=k * n, offset=20 + 8 * n * n).reshape(k, n).copy()
    return a, b
