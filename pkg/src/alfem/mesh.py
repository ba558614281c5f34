"""Conforming triangulations, red refinement and patch layers."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Conforming 2D triangulation.

    ``parent`` (if set) maps every triangle to the triangle of the mesh this
    one was refined from. ``refine_red`` composes the links over all steps,
    so the parent always refers to the mesh passed to it.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_vertex: np.ndarray
    level: int = 0
    parent: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def areas(self) -> np.ndarray:
        if "areas" not in self._cache:
            self._cache["areas"] = signed_areas(self.vertices, self.triangles)
        return self._cache["areas"]

    @property
    def diameters(self) -> np.ndarray:
        if "diam" not in self._cache:
            p = self.vertices[self.triangles]
            e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
            self._cache["diam"] = np.sqrt((e ** 2).sum(axis=2)).max(axis=1)
        return self._cache["diam"]

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @property
    def h(self) -> float:
        """Maximal triangle diameter."""
        return float(self.diameters.max())

    def vertex_to_triangles(self) -> sp.csr_matrix:
        """Incidence matrix, vertices x triangles."""
        if "v2t" not in self._cache:
            nt = self.n_triangles
            rows = self.triangles.ravel()
            cols = np.repeat(np.arange(nt), 3)
            data = np.ones(3 * nt, dtype=np.int8)
            m = sp.csr_matrix((data, (rows, cols)), shape=(self.n_vertices, nt))
            self._cache["v2t"] = m
        return self._cache["v2t"]

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique sorted edges and the per-triangle edge indices.

        Local edge ``j`` of a triangle is opposite to its local vertex ``j``.
        """
        if "edges" not in self._cache:
            t = self.triangles
            e = np.concatenate([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]])
            e.sort(axis=1)
            key = e[:, 0].astype(np.int64) * self.n_vertices + e[:, 1]
            ukey, inv = np.unique(key, return_inverse=True)
            uniq = np.column_stack([ukey // self.n_vertices, ukey % self.n_vertices])
            t2e = inv.reshape(3, -1).T
            self._cache["edges"] = (uniq, t2e)
        return self._cache["edges"]

    def boundary_edges(self) -> np.ndarray:
        edges, t2e = self.edges()
        counts = np.bincount(t2e.ravel(), minlength=len(edges))
        return edges[counts == 1]


def signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_structured_mesh(n: int, domain=(0.0, 1.0, 0.0, 1.0)) -> TriMesh:
    """Split an ``n x n`` grid of cells along the lower-left/upper-right diagonal."""
    if n < 1:
        raise ValueError(f"need at least one subdivision per side, got n={n}")
    x0, x1, y0, y1 = domain
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate rectangle {domain}")
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    lower = np.column_stack([a, b, c])
    upper = np.column_stack([a, c, d])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    bnd = (
        (np.abs(vertices[:, 0] - x0) < TOL)
        | (np.abs(vertices[:, 0] - x1) < TOL)
        | (np.abs(vertices[:, 1] - y0) < TOL)
        | (np.abs(vertices[:, 1] - y1) < TOL)
    )
    return TriMesh(vertices, triangles, bnd, level=0)


def _red_step(mesh: TriMesh):
    """One red refinement; new vertices are the edge midpoints, appended in edge order."""
    edges, t2e = mesh.edges()
    nv = mesh.n_vertices
    mid = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    vertices = np.vstack([mesh.vertices, mid])
    t = mesh.triangles
    m0, m1, m2 = (t2e[:, j] + nv for j in range(3))  # m_j opposite to vertex j
    children = np.stack(
        [
            np.column_stack([t[:, 0], m2, m1]),
            np.column_stack([m2, t[:, 1], m0]),
            np.column_stack([m1, m0, t[:, 2]]),
            np.column_stack([m0, m1, m2]),
        ],
        axis=1,
    ).reshape(-1, 3)
    counts = np.bincount(t2e.ravel(), minlength=len(edges))
    edge_bnd = counts == 1
    bnd = np.concatenate([mesh.boundary_vertex, edge_bnd])
    parent = np.repeat(np.arange(mesh.n_triangles), 4)
    return vertices, children, bnd, parent, edges


def refine_red(mesh: TriMesh, t: int = 1) -> TriMesh:
    """Apply ``t`` red refinements; ``parent`` of the result indexes ``mesh``."""
    return _refine(mesh, t, False)[0]


def prolongation(mesh: TriMesh, t: int) -> sp.csr_matrix:
    """P1 interpolation from ``mesh`` vertices to the vertices of ``refine_red(mesh, t)``."""
    return _refine(mesh, t, True)[1]


def refine_with_prolongation(mesh: TriMesh, t: int) -> tuple[TriMesh, sp.csr_matrix]:
    return _refine(mesh, t, True)


def _refine(mesh: TriMesh, t: int, want_p: bool):
    if t < 0:
        raise ValueError("refinement depth must be non-negative")
    P = sp.identity(mesh.n_vertices, format="csr") if want_p else None
    if t == 0:
        return mesh, P
    parent = np.arange(mesh.n_triangles)
    cur = mesh
    for _ in range(t):
        vertices, triangles, bnd, p, edges = _red_step(cur)
        parent = parent[p]
        if want_p:
            nv, ne = cur.n_vertices, len(edges)
            rows = np.concatenate([np.arange(nv), nv + np.arange(ne), nv + np.arange(ne)])
            cols = np.concatenate([np.arange(nv), edges[:, 0], edges[:, 1]])
            vals = np.concatenate([np.ones(nv), np.full(2 * ne, 0.5)])
            P = sp.csr_matrix((vals, (rows, cols)), shape=(nv + ne, nv)) @ P
        cur = TriMesh(vertices, triangles, bnd, level=cur.level + 1)
    fine = TriMesh(cur.vertices, cur.triangles, cur.boundary_vertex, level=mesh.level + t, parent=parent)
    return fine, (P.tocsr() if want_p else None)


def check_conforming(mesh: TriMesh) -> list[str]:
    """Return a list of conformity violations (empty when the mesh is fine)."""
    problems = []
    if np.any(mesh.areas <= 0):
        problems.append(f"{int(np.sum(mesh.areas <= 0))} triangles with non-positive area")
    t = mesh.triangles
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    _, dcounts = np.unique(directed, axis=0, return_counts=True)
    if np.any(dcounts > 1):
        problems.append("edge traversed twice in the same direction")
    edges, t2e = mesh.edges()
    counts = np.bincount(t2e.ravel(), minlength=len(edges))
    if np.any(counts > 2):
        problems.append("edge shared by more than two triangles")
    # a hanging node sits in the relative interior of a singly used edge
    be = edges[counts == 1]
    if len(be):
        a = mesh.vertices[be[:, 0]]
        b = mesh.vertices[be[:, 1]]
        used = np.unique(t)
        pts = mesh.vertices[used]
        d = b - a
        L2 = (d ** 2).sum(axis=1)
        chunk = max(1, 2_000_000 // max(len(be), 1))
        for s in range(0, len(pts), chunk):
            p = pts[s : s + chunk, None, :]
            s_par = ((p - a) * d).sum(axis=2) / L2
            cross = (p[..., 0] - a[:, 0]) * d[:, 1] - (p[..., 1] - a[:, 1]) * d[:, 0]
            hit = (np.abs(cross) <= TOL * np.sqrt(L2)) & (s_par > TOL) & (s_par < 1 - TOL)
            if np.any(hit):
                problems.append("hanging node on an edge")
                break
    return problems


def is_conforming(mesh: TriMesh) -> bool:
    return not check_conforming(mesh)


# -- patches -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Patch:
    """Triangle layers around one vertex of a coarse mesh."""

    center_node: int
    omega: tuple[np.ndarray, np.ndarray, np.ndarray]
    ring: np.ndarray
    H_i: float
    delta_i: float
    touches_boundary: bool = False


def _grow(mesh: TriMesh, tris: np.ndarray) -> np.ndarray:
    v2t = mesh.vertex_to_triangles()
    verts = np.unique(mesh.triangles[tris])
    return np.unique(v2t[verts].indices)


def boundary_segments(mesh: TriMesh, tris: np.ndarray, exclude_domain_boundary=False) -> np.ndarray:
    """Boundary edges of the region covered by ``tris`` as an (m, 2, 2) array of points."""
    t = mesh.triangles[tris]
    e = np.concatenate([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]])
    e.sort(axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    be = uniq[counts == 1]
    if exclude_domain_boundary and len(be):
        gb = mesh.boundary_edges()
        gset = {tuple(x) for x in gb}
        keep = np.array([tuple(x) not in gset for x in be], dtype=bool)
        be = be[keep]
    return mesh.vertices[be]


def segment_distance(P: np.ndarray, Q: np.ndarray) -> float:
    """Minimal distance between two families of segments, each (m, 2, 2)."""
    if len(P) == 0 or len(Q) == 0:
        return float("inf")
    best = np.inf
    for A, B in ((P, Q), (Q, P)):
        # endpoints of A against segments of B
        pts = A.reshape(-1, 2)
        best = min(best, float(point_segment_distance(pts, B).min()))
    # proper crossings give distance zero
    if _segments_cross(P, Q):
        return 0.0
    return best


def point_segment_distance(pts: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Distance of each point to the union of segments; returns (n_pts,)."""
    a = segs[:, 0]
    d = segs[:, 1] - a
    L2 = np.maximum((d ** 2).sum(axis=1), 1e-300)
    out = np.full(len(pts), np.inf)
    chunk = max(1, 4_000_000 // max(len(segs), 1))
    for s in range(0, len(pts), chunk):
        p = pts[s : s + chunk, None, :]
        tpar = np.clip(((p - a) * d).sum(axis=2) / L2, 0.0, 1.0)
        proj = a + tpar[..., None] * d
        out[s : s + chunk] = np.sqrt(((p - proj) ** 2).sum(axis=2)).min(axis=1)
    return out


def _segments_cross(P: np.ndarray, Q: np.ndarray) -> bool:
    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])

    p0, p1 = P[:, None, 0], P[:, None, 1]
    q0, q1 = Q[None, :, 0], Q[None, :, 1]
    o1 = orient(p0, p1, q0)
    o2 = orient(p0, p1, q1)
    o3 = orient(q0, q1, p0)
    o4 = orient(q0, q1, p1)
    return bool(np.any((o1 * o2 < 0) & (o3 * o4 < 0)))


def compute_patch(mesh: TriMesh, node: int) -> Patch:
    if not 0 <= node < mesh.n_vertices:
        raise IndexError(f"vertex {node} not in mesh")
    v2t = mesh.vertex_to_triangles()
    w0 = np.sort(v2t[node].indices)
    w1 = _grow(mesh, w0)
    w2 = _grow(mesh, w1)
    ring = np.setdiff1d(w2, w1)
    H_i = float(mesh.diameters[w2].max())
    outer = boundary_segments(mesh, w2, exclude_domain_boundary=True)
    inner = boundary_segments(mesh, w1)
    delta = segment_distance(inner, outer) if len(outer) else float("inf")
    touch = bool(np.any(mesh.boundary_vertex[mesh.triangles[w0]]))
    return Patch(node, (w0, w1, w2), ring, H_i, delta, touch)


def basis_nodes(mesh: TriMesh) -> np.ndarray:
    """Vertices carrying a hat function in H^1_0: the interior ones."""
    return np.flatnonzero(~mesh.boundary_vertex)


@dataclass(frozen=True)
class OverlapReport:
    M: tuple[int, int, int]
    shape_metric: float
    patch_card_max: int


def overlap_report(mesh: TriMesh, patches) -> OverlapReport:
    counts = np.zeros((3, mesh.n_triangles), dtype=int)
    for p in patches:
        for j in range(3):
            counts[j, p.omega[j]] += 1
    M = tuple(int(c.max()) if len(patches) else 0 for c in counts)
    p = mesh.vertices[mesh.triangles]
    per = sum(np.linalg.norm(p[:, (j + 1) % 3] - p[:, j], axis=1) for j in range(3))
    rho = 4.0 * mesh.areas / per  # inscribed-circle diameter
    shape = float((rho / mesh.diameters).min())
    card = max((len(p.omega[2]) for p in patches), default=0)
    return OverlapReport(M, shape, card)


# -- JSON --------------------------------------------------------------------


def mesh_to_dict(mesh: TriMesh) -> dict:
    return {
        "vertices": mesh.vertices.tolist(),
        "triangles": mesh.triangles.tolist(),
        "boundary": np.flatnonzero(mesh.boundary_vertex).tolist(),
    }


def mesh_from_dict(d: dict) -> TriMesh:
    vertices = np.asarray(d["vertices"], dtype=float).reshape(-1, 2)
    triangles = np.asarray(d["triangles"], dtype=np.int64).reshape(-1, 3)
    bnd = np.zeros(len(vertices), dtype=bool)
    bnd[np.asarray(d.get("boundary", []), dtype=np.int64)] = True
    mesh = TriMesh(vertices, triangles, bnd)
    problems = check_conforming(mesh)
    if problems:
        raise ValueError("mesh is not conforming: " + "; ".join(problems))
    return mesh


def save_mesh(mesh: TriMesh, path) -> None:
    Path(path).write_text(json.dumps(mesh_to_dict(mesh)))


def load_mesh(path) -> TriMesh:
    return mesh_from_dict(json.loads(Path(path).read_text()))
