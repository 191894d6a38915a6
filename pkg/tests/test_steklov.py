import numpy as np
import pytest

from conftest import PARAMS
from hemivar.fem import assemble_stiffness
from hemivar.mesh import cube_mesh, refine_uniform, shell_mesh
from hemivar.steklov import (
    SteklovError,
    apply_reconstruct,
    build_dtn,
    dump_dtn,
    load_dtn_arrays,
    project_P,
    rigid_basis,
)


def test_structure(cube2):
    m, K, d = cube2
    a = d.matrix
    assert d.raw_asymmetry < 1e-12
    assert np.array_equal(a, a.T)
    chi = d.kernel_basis.fields
    assert np.abs(a @ chi.T).max() <= 1e-9 * np.abs(a).max()
    ev = np.linalg.eigvalsh(a)
    assert np.all(np.abs(ev[:6]) < 1e-9 * ev[-1])
    assert ev[6] > 1e-6 * ev[-1]
    assert d.coercivity_c > 0


def test_energy_of_extension_matches(cube2):
    _, K, d = cube2
    rng = np.random.default_rng(0)
    for _ in range(5):
        h = rng.standard_normal(d.n)
        U = apply_reconstruct(d, h)
        assert U @ (K.matrix @ U) == pytest.approx(d.energy(h), rel=1e-10)


def test_extension_minimizes_energy(cube2):
    _, K, d = cube2
    rng = np.random.default_rng(1)
    h = rng.standard_normal(d.n)
    U = apply_reconstruct(d, h)
    V = U.copy()
    V[d.interior_dofs] += 1e-3 * rng.standard_normal(len(d.interior_dofs))
    assert V @ (K.matrix @ V) > U @ (K.matrix @ U)


def test_rigid_basis_orthonormal_and_projection(cube2):
    m, _, d = cube2
    b = rigid_basis(m)
    assert np.allclose(b.gram(), np.eye(6), atol=1e-12)
    rng = np.random.default_rng(2)
    h = rng.standard_normal(d.n)
    ph, qh = project_P(h, b)
    assert np.allclose(ph + qh, h)
    assert np.abs(b.coefficients(qh)).max() < 1e-12
    ph2, _ = project_P(ph, b)
    assert np.allclose(ph2, ph)


def test_coercivity_stable_under_refinement():
    m = cube_mesh(1)
    c = [build_dtn(assemble_stiffness(mm, PARAMS), mm).coercivity_c for mm in (m, refine_uniform(m))]
    assert min(c) > 0
    assert c[1] > 0.5 * c[0]


def test_exterior_positive_definite():
    s = shell_mesh(0.5, 2, far=2.0)
    d = build_dtn(assemble_stiffness(s, PARAMS), s, "exterior_minus")
    assert d.kernel_basis is None
    assert np.linalg.eigvalsh(d.matrix)[0] > 0
    assert d.coercivity_c > 0


def test_kind_must_match_region(cube2):
    m, K, _ = cube2
    with pytest.raises(SteklovError):
        build_dtn(K, m, "exterior_minus")


def test_dump_roundtrip(tmp_path, cube2):
    _, _, d = cube2
    dump_dtn(d, tmp_path / "a.dtn")
    a, b = load_dtn_arrays(tmp_path / "a.dtn")
    assert np.array_equal(a, d.matrix)
    assert np.array_equal(b, d.kernel_basis.fields)
    raw = (tmp_path / "a.dtn").read_bytes()
    (tmp_path / "bad.dtn").write_bytes(raw[:-8])
    with pytest.raises(SteklovError, match="bytes"):
        load_dtn_arrays(tmp_path / "bad.dtn")


def test_dual_norm_is_dual(cube2):
    _, _, d = cube2
    rng = np.random.default_rng(3)
    phi = rng.standard_normal(d.n)
    w = d.trace.mass_diag()
    nrm = d.norm_minus_half(phi)
    for _ in range(20):
        h = rng.standard_normal(d.n)
        assert abs((w * phi) @ h) <= nrm * d.norm_half(h) * (1 + 1e-12)
