"""Tetrahedral meshes, boundary partition and nodal trace data.

Mesh file format (plain text, ``#`` starts a comment)::

    nodes N
    x y z            (N lines)
    tets M
    i j k l          (M lines, zero-based)
    btris K
    i j k TAG        (K lines, TAG in S1|S2|FAR)
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

TAGS = ("S1", "S2", "FAR")


class MeshError(ValueError):
    """Malformed or invalid mesh; ``line`` is the 1-based file line when known."""

    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


@dataclass
class Mesh:
    nodes: np.ndarray
    tets: np.ndarray
    btris: np.ndarray
    btags: np.ndarray
    region: str = "interior"
    _lines: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float).reshape(-1, 3)
        self.tets = np.ascontiguousarray(self.tets, dtype=np.int64).reshape(-1, 4)
        self.btris = np.ascontiguousarray(self.btris, dtype=np.int64).reshape(-1, 3)
        self.btags = np.asarray(self.btags, dtype="<U3")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def tet_volumes(self) -> np.ndarray:
        x = self.nodes[self.tets]
        d = x[:, 1:] - x[:, :1]
        return np.linalg.det(d) / 6.0

    def tri_normals(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit normals (following vertex order) and areas of boundary triangles."""
        x = self.nodes[self.btris]
        c = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
        a2 = np.linalg.norm(c, axis=1)
        return c / a2[:, None], 0.5 * a2

    def area_by_tag(self) -> dict[str, float]:
        _, areas = self.tri_normals()
        return {t: float(areas[self.btags == t].sum()) for t in TAGS}

    def validate(self) -> None:
        _validate(self)


def _line(mesh, kind, idx):
    return mesh._lines.get(kind, {}).get(int(idx))


def _validate(mesh: Mesh) -> None:
    n = mesh.n_nodes
    for kind, arr in (("tet", mesh.tets), ("btri", mesh.btris)):
        bad = np.nonzero((arr < 0) | (arr >= n))[0]
        if len(bad):
            raise MeshError(f"{kind} {bad[0]} references a node outside 0..{n - 1}", _line(mesh, kind, bad[0]))
        rep = np.nonzero([len(set(r)) != len(r) for r in arr.tolist()])[0]
        if len(rep):
            raise MeshError(f"{kind} {rep[0]} repeats a node", _line(mesh, kind, rep[0]))
    vol = mesh.tet_volumes()
    ext = np.ptp(mesh.nodes, axis=0).max() if n else 1.0
    bad = np.nonzero(vol <= 1e-14 * ext**3)[0]
    if len(bad):
        raise MeshError(f"tet {bad[0]} is inverted or degenerate (signed volume {vol[bad[0]]:.3e})", _line(mesh, "tet", bad[0]))
    for k, t in enumerate(mesh.btags):
        if t not in TAGS:
            raise MeshError(f"unknown boundary tag {t!r}", _line(mesh, "btri", k))
    if mesh.region not in ("interior", "exterior_truncated"):
        raise MeshError(f"unknown region {mesh.region!r}")
    if mesh.region == "interior" and np.any(mesh.btags == "FAR"):
        raise MeshError("tag FAR is only allowed on truncated exterior meshes")

    face_owner = {}
    counts = Counter()
    for e, tet in enumerate(mesh.tets.tolist()):
        for opp in range(4):
            f = tuple(sorted(tet[:opp] + tet[opp + 1 :]))
            counts[f] += 1
            face_owner[f] = (e, tet[opp])
    over = [f for f, c in counts.items() if c > 2]
    if over:
        raise MeshError(f"face {over[0]} is shared by more than two tets")
    boundary = {f for f, c in counts.items() if c == 1}

    seen = {}
    for k, tri in enumerate(mesh.btris.tolist()):
        key = tuple(sorted(tri))
        if key in seen:
            raise MeshError(f"boundary triangle {k} duplicates triangle {seen[key]}", _line(mesh, "btri", k))
        if key not in boundary:
            raise MeshError(f"boundary triangle {k} {tri} is not a boundary face of the tet mesh", _line(mesh, "btri", k))
        seen[key] = k
    missing = boundary.difference(seen)
    if missing:
        f = sorted(missing)[0]
        raise MeshError(f"open boundary/untagged face: {len(missing)} boundary face(s) carry no tag, e.g. {f}")

    edges = Counter()
    for tri in mesh.btris.tolist():
        for a, b in ((0, 1), (1, 2), (2, 0)):
            edges[tuple(sorted((tri[a], tri[b])))] += 1
    open_e = [e for e, c in edges.items() if c != 2]
    if open_e:
        raise MeshError(f"open boundary: edge {open_e[0]} is shared by {edges[open_e[0]]} boundary triangles")

    # orient boundary triangles outward
    x = mesh.nodes
    for k, tri in enumerate(mesh.btris):
        _, opp = face_owner[tuple(sorted(tri.tolist()))]
        nrm = np.cross(x[tri[1]] - x[tri[0]], x[tri[2]] - x[tri[0]])
        if np.dot(nrm, x[tri].mean(axis=0) - x[opp]) < 0:
            mesh.btris[k] = tri[[0, 2, 1]]


def load_mesh(path) -> Mesh:
    text = Path(path).read_text().splitlines()
    rows = []
    for ln, raw in enumerate(text, start=1):
        s = raw.split("#", 1)[0].strip()
        if s:
            rows.append((ln, s.split()))
    pos = 0

    def header(name):
        nonlocal pos
        if pos >= len(rows):
            raise MeshError(f"missing section '{name}'", len(text))
        ln, tok = rows[pos]
        if len(tok) != 2 or tok[0] != name:
            raise MeshError(f"expected '{name} <count>', got {' '.join(tok)!r}", ln)
        try:
            cnt = int(tok[1])
        except ValueError:
            raise MeshError(f"bad count {tok[1]!r}", ln) from None
        if cnt < 0:
            raise MeshError(f"negative count {cnt}", ln)
        pos += 1
        return cnt

    def body(cnt, width, conv, name, tagged=False):
        nonlocal pos
        vals, lines = [], {}
        for i in range(cnt):
            if pos >= len(rows):
                raise MeshError(f"section '{name}' ends after {i} of {cnt} entries", len(text))
            ln, tok = rows[pos]
            need = width + (1 if tagged else 0)
            if len(tok) != need:
                raise MeshError(f"expected {need} fields in '{name}' entry, got {len(tok)}", ln)
            try:
                vals.append([conv(t) for t in tok[:width]] + (tok[width:] if tagged else []))
            except ValueError:
                raise MeshError(f"malformed number in '{name}' entry: {' '.join(tok)!r}", ln) from None
            lines[i] = ln
            pos += 1
        return vals, lines

    nodes, _ = body(header("nodes"), 3, float, "nodes")
    tets, tet_lines = body(header("tets"), 4, int, "tets")
    btris, tri_lines = body(header("btris"), 3, int, "btris", tagged=True)
    if pos < len(rows):
        raise MeshError("unexpected trailing content", rows[pos][0])
    tags = [r[3] for r in btris]
    for i, t in enumerate(tags):
        if t not in TAGS:
            raise MeshError(f"unknown boundary tag {t!r}", tri_lines[i])
    region = "exterior_truncated" if "FAR" in tags else "interior"
    mesh = Mesh(
        np.array(nodes).reshape(-1, 3),
        np.array(tets, dtype=np.int64).reshape(-1, 4),
        np.array([r[:3] for r in btris], dtype=np.int64).reshape(-1, 3),
        np.array(tags, dtype="<U3"),
        region,
        {"tet": tet_lines, "btri": tri_lines},
    )
    mesh.validate()
    return mesh


def write_mesh(mesh: Mesh, path) -> None:
    out = [f"nodes {mesh.n_nodes}"]
    out += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.nodes.tolist()]
    out.append(f"tets {len(mesh.tets)}")
    out += [" ".join(map(str, t)) for t in mesh.tets.tolist()]
    out.append(f"btris {len(mesh.btris)}")
    out += [f"{a} {b} {c} {t}" for (a, b, c), t in zip(mesh.btris.tolist(), mesh.btags.tolist())]
    Path(path).write_text("\n".join(out) + "\n")


# ----------------------------------------------------------------------------
# trace data


def tangent_pair(n) -> np.ndarray:
    """Orthonormal tangents (2, 3) for unit normal n; the first starts from the
    coordinate axis least aligned with n (lowest index on ties)."""
    n = np.asarray(n, dtype=float)
    k = int(np.argmin(np.abs(n)))
    e = np.zeros(3)
    e[k] = 1.0
    t1 = e - n[k] * n
    t1 /= np.linalg.norm(t1)
    return np.array([t1, np.cross(n, t1)])


def tangential_decompose(v, n) -> tuple[float, np.ndarray]:
    v = np.asarray(v, dtype=float)
    n = np.asarray(n, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > 1e-10:
        raise ValueError("normal must have unit length")
    vn = float(v @ n)
    return vn, v - vn * n


@dataclass
class TraceMap:
    """Nodal data on the contact surface S (FAR excluded).

    ``w1``/``w2`` are lumped (area/3) weights from S1/S2 triangles. Nodes with
    any S1 weight have role S1; interface nodes are therefore S1.
    """

    boundary_nodes: np.ndarray
    normals: np.ndarray
    tangents: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    far_nodes: np.ndarray
    coords: np.ndarray

    @property
    def n(self) -> int:
        return len(self.boundary_nodes)

    @property
    def weights(self) -> np.ndarray:
        return self.w1 + self.w2

    @property
    def is_s1(self) -> np.ndarray:
        return self.w1 > 0

    @property
    def is_s2(self) -> np.ndarray:
        return self.w2 > 0

    def dofs(self, local_nodes=None) -> np.ndarray:
        """Boundary-vector dof indices (6 per node, u then omega)."""
        idx = np.arange(self.n) if local_nodes is None else np.asarray(local_nodes)
        return (6 * idx[:, None] + np.arange(6)).ravel()

    def global_dofs(self) -> np.ndarray:
        return (6 * self.boundary_nodes[:, None] + np.arange(6)).ravel()

    def mass_diag(self) -> np.ndarray:
        """Lumped boundary L2 weights per boundary dof."""
        return np.repeat(self.weights, 6)


def build_trace_map(mesh: Mesh) -> TraceMap:
    nrm, area = mesh.tri_normals()
    on_s = mesh.btags != "FAR"
    s_nodes = np.unique(mesh.btris[on_s])
    far = np.unique(mesh.btris[~on_s]) if np.any(~on_s) else np.zeros(0, dtype=np.int64)
    if len(np.intersect1d(s_nodes, far)):
        raise MeshError("contact surface S touches the FAR boundary")
    loc = {int(g): i for i, g in enumerate(s_nodes)}
    nb = len(s_nodes)
    acc = np.zeros((nb, 3))
    w1 = np.zeros(nb)
    w2 = np.zeros(nb)
    for k in np.nonzero(on_s)[0]:
        for g in mesh.btris[k]:
            i = loc[int(g)]
            acc[i] += area[k] * nrm[k]
            if mesh.btags[k] == "S1":
                w1[i] += area[k] / 3
            else:
                w2[i] += area[k] / 3
    normals = acc / np.linalg.norm(acc, axis=1)[:, None]
    tangents = np.array([tangent_pair(v) for v in normals]).reshape(nb, 2, 3)
    return TraceMap(s_nodes, normals, tangents, w1, w2, far, mesh.nodes[s_nodes].copy())


# ----------------------------------------------------------------------------
# construction helpers and generators

Tagger = Callable[[np.ndarray, np.ndarray], str]


def mesh_from_tets(nodes, tets, tagger: Tagger, region: str = "interior") -> Mesh:
    """Build a validated mesh: orient tets, extract and tag the boundary.

    ``tagger(centroid, outward_normal)`` returns the tag of a boundary triangle.
    """
    nodes = np.asarray(nodes, dtype=float)
    tets = np.array(tets, dtype=np.int64)
    x = nodes[tets]
    neg = np.linalg.det(x[:, 1:] - x[:, :1]) < 0
    tets[neg] = tets[neg][:, [0, 2, 1, 3]]
    counts = Counter()
    owner = {}
    for tet in tets.tolist():
        for opp in range(4):
            f = tet[:opp] + tet[opp + 1 :]
            key = tuple(sorted(f))
            counts[key] += 1
            owner[key] = (f, tet[opp])
    tris, tags = [], []
    for key in sorted(k for k, c in counts.items() if c == 1):
        f, opp = owner[key]
        p = nodes[f]
        nv = np.cross(p[1] - p[0], p[2] - p[0])
        c = p.mean(axis=0)
        if np.dot(nv, c - nodes[opp]) < 0:
            f = [f[0], f[2], f[1]]
            nv = -nv
        tris.append(f)
        tags.append(tagger(c, nv / np.linalg.norm(nv)))
    mesh = Mesh(nodes, tets, np.array(tris), np.array(tags), region)
    mesh.validate()
    return mesh


def face_tagger(s1_faces=("x-",), size=1.0, origin=(0.0, 0.0, 0.0)) -> Tagger:
    """Tag the listed box faces ('x-', 'y+', ...) as S1 and the rest as S2."""
    origin = np.asarray(origin, dtype=float)
    tol = 1e-9 * size

    def tag(c, n):
        rel = c - origin
        for f in s1_faces:
            ax = "xyz".index(f[0])
            target = 0.0 if f[1] == "-" else size
            if abs(rel[ax] - target) < tol:
                return "S1"
        return "S2"

    return tag


def cube_mesh(n: int = 1, size: float = 1.0, s1_faces=("x-",), origin=(0.0, 0.0, 0.0)) -> Mesh:
    """Structured cube [origin, origin + size]^3 with n^3 cells, 6 tets per cell."""
    origin = np.asarray(origin, dtype=float)
    g = np.linspace(0.0, size, n + 1)
    idx = np.arange((n + 1) ** 3).reshape(n + 1, n + 1, n + 1)
    nodes = np.array([[g[i], g[j], g[k]] for i in range(n + 1) for j in range(n + 1) for k in range(n + 1)]) + origin
    perms = ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0))
    tets = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for perm in perms:
                    c = [0, 0, 0]
                    path = [idx[i, j, k]]
                    for ax in perm:
                        c[ax] += 1
                        path.append(idx[i + c[0], j + c[1], k + c[2]])
                    tets.append(path)
    return mesh_from_tets(nodes, tets, face_tagger(s1_faces, size, origin))


_HEX_FACES = ((0, 1, 2, 3), (4, 5, 6, 7), (0, 1, 5, 4), (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7))


def hexes_to_tets(nodes, hexes) -> tuple[np.ndarray, np.ndarray]:
    """Conforming split of hexahedra into 24 tets each (cell and face centres)."""
    nodes = [np.asarray(p, dtype=float) for p in nodes]
    face_centre = {}
    tets = []
    for hx in hexes:
        cc = len(nodes)
        nodes.append(np.mean([nodes[v] for v in hx], axis=0))
        for face in _HEX_FACES:
            q = [hx[v] for v in face]
            key = tuple(sorted(q))
            if key not in face_centre:
                face_centre[key] = len(nodes)
                nodes.append(np.mean([nodes[v] for v in q], axis=0))
            fc = face_centre[key]
            for a in range(4):
                tets.append([cc, fc, q[a], q[(a + 1) % 4]])
    return np.array(nodes), np.array(tets, dtype=np.int64)


def tube_mesh(r_in=0.5, r_out=1.0, height=1.0, nr=1, ntheta=12, nz=2, tag="S2") -> Mesh:
    """Hollow cylinder about the z axis: a solid of revolution whose boundary is
    a rotational surface. All boundary triangles get ``tag``."""
    rs = np.linspace(r_in, r_out, nr + 1)
    th = 2 * np.pi * np.arange(ntheta) / ntheta
    zs = np.linspace(0.0, height, nz + 1)
    nid = lambda i, j, k: (i * ntheta + (j % ntheta)) * (nz + 1) + k  # noqa: E731
    nodes = [[r * np.cos(t), r * np.sin(t), z] for r in rs for t in th for z in zs]
    hexes = []
    for i in range(nr):
        for j in range(ntheta):
            for k in range(nz):
                hexes.append(
                    [nid(i, j, k), nid(i + 1, j, k), nid(i + 1, j + 1, k), nid(i, j + 1, k),
                     nid(i, j, k + 1), nid(i + 1, j, k + 1), nid(i + 1, j + 1, k + 1), nid(i, j + 1, k + 1)]
                )
    pts, tets = hexes_to_tets(nodes, hexes)
    return mesh_from_tets(pts, tets, lambda c, n: tag)


def shell_mesh(
    half_width: float = 0.5,
    n: int = 2,
    far: float | None = None,
    layers_per_doubling: int = 2,
    s1_faces=("x-",),
) -> Mesh:
    """Truncated exterior of the cube [-a, a]^3: nested scaled cube shells with
    geometric grading up to the far boundary of half-width ``far``.

    Layer scales are 2**(k / layers_per_doubling), so meshes with far = R and
    2R share their inner layers exactly. Outer triangles are tagged FAR.
    """
    a = float(half_width)
    if far is None:
        far = 4 * math.sqrt(3) * a
    levels = max(1, round(layers_per_doubling * math.log2(far / a)))
    scales = 2.0 ** (np.arange(levels + 1) / layers_per_doubling)
    lattice = {}
    surf = []
    for ix in range(n + 1):
        for iy in range(n + 1):
            for iz in range(n + 1):
                if min(ix, iy, iz) == 0 or max(ix, iy, iz) == n:
                    lattice[(ix, iy, iz)] = len(surf)
                    surf.append(a * (2 * np.array([ix, iy, iz]) / n - 1))
    surf = np.array(surf)
    ns = len(surf)
    nodes = np.concatenate([s * surf for s in scales])
    quads = []
    for ax in range(3):
        for side in (0, n):
            u, v = [d for d in range(3) if d != ax]
            for i in range(n):
                for j in range(n):
                    cyc = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        key = [0, 0, 0]
                        key[ax], key[u], key[v] = side, i + di, j + dj
                        cyc.append(lattice[tuple(key)])
                    quads.append(cyc)
    hexes = []
    for k in range(levels):
        for q in quads:
            hexes.append([k * ns + v for v in q] + [(k + 1) * ns + v for v in q])
    pts, tets = hexes_to_tets(nodes, hexes)
    outer = a * scales[-1]
    tol = 1e-9 * outer

    def tag(c, nrm):
        if np.max(np.abs(c)) > outer - tol:
            return "FAR"
        for f in s1_faces:
            ax = "xyz".index(f[0])
            if abs(c[ax] - (-a if f[1] == "-" else a)) < 1e-9 * a:
                return "S1"
        return "S2"

    return mesh_from_tets(pts, tets, tag, region="exterior_truncated")


def refine_uniform(m: Mesh) -> Mesh:
    """Split every tet into 8 (edge midpoints, shortest octahedron diagonal);
    boundary triangles split into 4 and inherit their tags."""
    nodes = [p for p in m.nodes]
    mid = {}

    def midpoint(a, b):
        key = (a, b) if a < b else (b, a)
        if key not in mid:
            mid[key] = len(nodes)
            nodes.append(0.5 * (m.nodes[a] + m.nodes[b]))
        return mid[key]

    tets = []
    for t in m.tets.tolist():
        v = t
        mm = {(i, j): midpoint(v[i], v[j]) for i in range(4) for j in range(i + 1, 4)}
        g = lambda i, j: mm[(min(i, j), max(i, j))]  # noqa: E731
        tets += [
            [v[0], g(0, 1), g(0, 2), g(0, 3)],
            [g(0, 1), v[1], g(1, 2), g(1, 3)],
            [g(0, 2), g(1, 2), v[2], g(2, 3)],
            [g(0, 3), g(1, 3), g(2, 3), v[3]],
        ]
        diags = (((0, 1), (2, 3)), ((0, 2), (1, 3)), ((0, 3), (1, 2)))
        lens = [np.linalg.norm(nodes[g(*d1)] - nodes[g(*d2)]) for d1, d2 in diags]
        d1, d2 = diags[int(np.argmin(lens))]
        others = [e for e in mm if e not in (d1, d2)]
        cyc = [others[0]]
        while len(cyc) < 4:
            last = cyc[-1]
            nxt = next(e for e in others if e not in cyc and set(e) & set(last))
            cyc.append(nxt)
        for i in range(4):
            tets.append([g(*d1), g(*d2), g(*cyc[i]), g(*cyc[(i + 1) % 4])])
    tris, tags = [], []
    for (a, b, c), tag in zip(m.btris.tolist(), m.btags.tolist()):
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        tris += [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
        tags += [tag] * 4
    nodes = np.array(nodes)
    tets = np.array(tets, dtype=np.int64)
    x = nodes[tets]
    neg = np.linalg.det(x[:, 1:] - x[:, :1]) < 0
    tets[neg] = tets[neg][:, [0, 2, 1, 3]]
    out = Mesh(nodes, tets, np.array(tris), np.array(tags), m.region)
    out.validate()
    return out


def node_tags(mesh: Mesh) -> dict[int, set]:
    out = defaultdict(set)
    for tri, t in zip(mesh.btris.tolist(), mesh.btags.tolist()):
        for v in tri:
            out[v].add(t)
    return out
