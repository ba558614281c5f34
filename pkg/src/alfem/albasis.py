"""Construction of the adaptive local (AL) basis on a nested fine mesh.

Every coarse vertex ``i`` gets

* nearfield functions: hat ``b_i`` times the patch solution for the
  indicator load of each coarse triangle of the first layer, and
* farfield functions: hat ``b_i`` times L2 projections of Cartesian-cell
  indicators onto the span of patch solutions driven by loads on the
  refined outer ring (locally L-harmonic on the first layer).

All functions are stored as vertex values of one global fine mesh, which is
a red refinement of the coarse mesh, so products with the hat are taken by
nodal interpolation and the AL space is a subspace of the fine P1 space.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.spatial import ConvexHull, QhullError

from . import clipping
from .coefficient import Coefficient, from_values
from .fem import (
    SparseSPD,
    characteristic_loads,
    element_stiffness,
    interior_vertices,
    mass_matrix,
    stiffness_matrix,
)
from .mesh import (
    Patch,
    TriMesh,
    basis_nodes,
    boundary_segments,
    compute_patch,
    mesh_from_dict,
    mesh_to_dict,
    point_segment_distance,
    refine_with_prolongation,
    segment_distance,
)

DROP_TOL = 1e-10
SNAPSHOT_CAP = 4096
_SNAP = 1e-9  # integer snapping in the ceil of the parameter formulas


def _ceil(x: float) -> int:
    return int(math.ceil(x - _SNAP))


@dataclass(frozen=True)
class ALParameters:
    ell: int
    k: int
    t: int
    c0: float = 1.0

    @property
    def decay(self) -> float:
        """(c0 ell / k)^ell, the farfield compression factor."""
        return (self.c0 * self.ell / self.k) ** self.ell

    @property
    def far_bound(self) -> int:
        return self.ell * self.k ** 2


def select_parameters(H_i: float, H: float, c0: float = 1.0) -> ALParameters:
    if c0 <= 0:
        raise ValueError("c0 must be positive")
    ell = 2
    if H_i < 1:
        ell = max(2, _ceil(2.0 / math.log(2.0) * math.log(1.0 / H_i)))
    k = _ceil(2.0 * c0 * ell ** 2 / (ell - 1))
    t = max(0, _ceil(math.log2(1.0 / H))) if H < 1 else 0
    return ALParameters(ell, k, t, c0)


def pivoted_gram(G: np.ndarray, rel_tol: float = DROP_TOL):
    """Truncated pivoted Cholesky of a Gram matrix.

    Returns ``(sel, R)`` with ``G[sel][:, sel] = R.T @ R``; pivoting stops once
    the largest remaining Schur-complement diagonal falls below
    ``rel_tol * max(diag(G))``.
    """
    n = G.shape[0]
    if n == 0:
        return np.zeros(0, dtype=int), np.zeros((0, 0))
    scale = float(np.max(np.diag(G)))
    if scale <= 0:
        return np.zeros(0, dtype=int), np.zeros((0, 0))
    c, piv, rank, info = sla.lapack.dpstrf(np.array(G, dtype=float, order="F"), lower=0, tol=rel_tol * scale)
    if info < 0:
        raise np.linalg.LinAlgError(f"dpstrf failed with info={info}")
    sel = piv[:rank] - 1
    R = np.triu(c[:rank, :rank])
    return sel, R


# -- level context -------------------------------------------------------------


class FineHierarchy:
    """Coarse mesh, its ``depth``-fold red refinement, and shared fine-scale operators.

    ``coef`` is a Coefficient whose resolution mesh is refined by the fine
    mesh, or a callable building one from the fine mesh.
    """

    def __init__(self, coarse: TriMesh, depth: int, coef):
        self.coarse = coarse
        self.depth = depth
        self.fine, hats = refine_with_prolongation(coarse, depth)
        # either a coefficient on an ancestor mesh or a factory evaluated on the fine mesh
        self.coef = coef(self.fine) if callable(coef) else coef.on_refinement(self.fine)
        self.K = stiffness_matrix(self.fine, self.coef)
        self.M = mass_matrix(self.fine)
        self.Ke = element_stiffness(self.fine, self.coef.values)
        self.hats = hats.tocsc()
        self._loads: dict[int, sp.csr_matrix] = {}

    def ancestor(self, s: int) -> np.ndarray:
        """Index of the depth-``s`` ancestor of each fine triangle."""
        if not 0 <= s <= self.depth:
            raise ValueError(f"ancestor depth {s} outside [0, {self.depth}]")
        return np.arange(self.fine.n_triangles) >> (2 * (self.depth - s))

    def descendants(self, coarse_tris: np.ndarray, s: int | None = None) -> np.ndarray:
        """Depth-``s`` descendants (default: fine triangles) of coarse triangles."""
        s = self.depth if s is None else s
        m = 4 ** s
        return (np.asarray(coarse_tris)[:, None] * m + np.arange(m)).ravel()

    def loads(self, s: int) -> sp.csr_matrix:
        """Exact loads of the indicators of all depth-``s`` triangles (fine vertices x triangles)."""
        if s not in self._loads:
            self._loads[s] = characteristic_loads(self.fine, self.ancestor(s), self.coarse.n_triangles * 4 ** s)
        return self._loads[s]

    def hat(self, node: int) -> np.ndarray:
        col = self.hats[:, node]
        out = np.zeros(self.fine.n_vertices)
        out[col.indices] = col.data
        return out

    def subset_matrix(self, tris: np.ndarray, kind: str) -> sp.csr_matrix:
        """Stiffness (``"K"``) or mass (``"M"``) assembled over a subset of fine triangles."""
        mesh = self.fine
        if kind == "K":
            Ke = self.Ke[tris]
        else:
            Ke = mesh.areas[tris, None, None] * ((np.ones((3, 3)) + np.eye(3)) / 12.0)
        t = mesh.triangles[tris]
        rows = np.repeat(t, 3, axis=1).ravel()
        cols = np.tile(t, (1, 3)).ravel()
        A = sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(mesh.n_vertices, mesh.n_vertices))
        return ((A + A.T) * 0.5).tocsr()


class PatchProblem:
    """Fine-scale local spaces of one coarse vertex."""

    def __init__(self, hier: FineHierarchy, node: int, patch: Patch | None = None):
        self.hier = hier
        self.node = node
        self.patch = patch if patch is not None else compute_patch(hier.coarse, node)
        fine = hier.fine
        self.tris = tuple(hier.descendants(w) for w in self.patch.omega)
        self.free2 = interior_vertices(fine, self.tris[2])
        self.free1 = interior_vertices(fine, self.tris[1])
        self.V1 = np.unique(fine.triangles[self.tris[1]])
        self.V0 = np.unique(fine.triangles[self.tris[0]])
        self.pos2 = np.full(fine.n_vertices, -1)
        self.pos2[self.free2] = np.arange(len(self.free2))
        self.K2 = SparseSPD(hier.K[self.free2][:, self.free2])

    def on(self, values2: np.ndarray, verts: np.ndarray) -> np.ndarray:
        """Values of patch-space functions (rows over ``free2``) at ``verts``; zero off the space."""
        p = self.pos2[verts]
        out = np.zeros((len(verts),) + values2.shape[1:])
        ok = p >= 0
        out[ok] = values2[p[ok]]
        return out

    def solve_loads(self, L: sp.spmatrix) -> np.ndarray:
        rhs = L[self.free2]
        rhs = rhs.toarray() if sp.issparse(rhs) else np.asarray(rhs)
        return self.K2.solve(rhs)

    @property
    def gamma(self) -> np.ndarray:
        """Fine vertices on the inner boundary of the first layer that carry dofs of the patch space."""
        onb = np.setdiff1d(self.V1, self.free1)
        return onb[self.pos2[onb] >= 0]

    def harmonic_residual(self, values1: np.ndarray) -> np.ndarray:
        """Relative L-harmonicity residual on the first layer of functions given on ``V1``.

        ``sup_w |a(v, w)| / (|v|_E |w|_E)`` over the zero-trace space of the
        first layer, evaluated exactly with one solve.
        """
        values1 = np.atleast_2d(values1.T).T
        K = self.hier.K
        r = K[self.free1][:, self.V1] @ values1
        K11 = SparseSPD(K[self.free1][:, self.free1])
        z = K11.solve(r)
        dual = np.sqrt(np.maximum((r * z).sum(axis=0), 0.0))
        K1 = self.hier.subset_matrix(self.tris[1], "K")[self.V1][:, self.V1]
        en = np.sqrt(np.maximum((values1 * (K1 @ values1)).sum(axis=0), 0.0))
        return dual / np.where(en > 0, en, 1.0)


# -- nearfield -----------------------------------------------------------------


def build_nearfield(pp: PatchProblem) -> np.ndarray:
    """Patch solutions for the indicator loads of the coarse triangles of the first layer.

    Returns (len(free2), #layer-1 triangles); columns follow ``patch.omega[1]``.
    """
    L = pp.hier.loads(0)[:, pp.patch.omega[1]]
    return pp.solve_loads(L)


# -- farfield snapshots --------------------------------------------------------


@dataclass(eq=False)
class FarfieldSnapshotSpace:
    """Spanning set of the locally L-harmonic space on the first layer.

    ``values`` holds vertex values on ``vertices`` (the fine vertices of the
    first layer). With ``method="direct"`` the columns are the individual
    snapshots; with ``method="trace"`` they are snapshots for combined ring
    loads spanning the same space (see ``build_farfield_snapshots``).
    """

    patch: Patch
    vertices: np.ndarray
    values: np.ndarray
    gram: np.ndarray
    snapshot_count: int
    method: str
    sel: np.ndarray = field(default=None)
    R: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.sel is None:
            self.sel, self.R = pivoted_gram(self.gram)

    @property
    def rank(self) -> int:
        return len(self.sel)

    def project(self, moments: np.ndarray) -> np.ndarray:
        """L2(first layer) projection given moments ``(g, phi_a)`` at ``vertices``; returns values."""
        return self.values[:, self.sel] @ self.project_coefficients(moments)

    def project_coefficients(self, moments) -> np.ndarray:
        rhs = np.asarray((moments.T @ self.values[:, self.sel]).T)  # moments may be sparse
        y = sla.solve_triangular(self.R, rhs, trans="T", lower=False)
        return sla.solve_triangular(self.R, y, lower=False)


def build_farfield_snapshots(
    pp: PatchProblem,
    params: ALParameters,
    *,
    method: str = "sketch",
    cap: int = SNAPSHOT_CAP,
    block: int = 64,
    seed: int = 0,
) -> FarfieldSnapshotSpace:
    """Patch solutions for indicator loads of the ``t``-fold refined outer ring.

    ``method="direct"`` solves one patch problem per refined ring triangle and
    keeps every snapshot; it refuses to run above ``cap`` snapshots.
    ``method="trace"`` uses that the loads vanish on the interior of the
    first layer: the restriction of a snapshot to the first layer is the
    discrete harmonic extension of its trace on the inner boundary, so the
    span is recovered from the trace map (one solve per boundary dof) and a
    basis of its range (one solve per singular vector).
    ``method="sketch"`` solves for seeded Gaussian combinations of the ring
    loads in blocks of ``block`` until the truncated Gram rank stops growing
    (at least ``block // 2`` directions of the last block are dropped).
    """
    hier = pp.hier
    t = params.t
    if t > hier.depth:
        raise ValueError(f"ring refinement t={t} exceeds the fine depth {hier.depth}")
    ring_t = hier.descendants(pp.patch.ring, t)
    count = len(ring_t)
    L = hier.loads(t)[:, ring_t]
    if count == 0:
        values = np.zeros((len(pp.V1), 0))
    elif method == "direct":
        if count > cap:
            raise MemoryError(f"{count} farfield snapshots exceed the cap of {cap}")
        values = pp.on(pp.solve_loads(L), pp.V1)
    elif method == "trace":
        gamma = pp.gamma
        E = np.zeros((len(pp.free2), len(gamma)))
        E[pp.pos2[gamma], np.arange(len(gamma))] = 1.0
        Z = pp.K2.solve(E)
        Lf = L[pp.free2]
        U = np.asarray((Lf.T @ Z).T)  # traces of all snapshots, |gamma| x count
        _, s, Vt = np.linalg.svd(U, full_matrices=False)
        r = int(np.sum(s > 1e-14 * s[0])) if len(s) and s[0] > 0 else 0
        combos = Lf @ Vt[:r].T
        values = pp.on(pp.K2.solve(np.asarray(combos)), pp.V1)
    elif method == "sketch":
        M1 = hier.subset_matrix(pp.tris[1], "M")[pp.V1][:, pp.V1]
        rng = np.random.default_rng([seed, pp.node])
        Lf = L[pp.free2]
        values = np.zeros((len(pp.V1), 0))
        gram = np.zeros((0, 0))
        while True:
            omega = rng.standard_normal((count, block))
            new = pp.on(pp.K2.solve(np.asarray(Lf @ omega)), pp.V1)
            # extend the Gram matrix by the new columns only
            Mnew = M1 @ new
            cross = values.T @ Mnew
            gram = np.block([[gram, cross], [cross.T, _sym(new.T @ Mnew)]])
            values = np.hstack([values, new])
            sel, R = pivoted_gram(gram)
            if len(sel) <= values.shape[1] - block // 2 or values.shape[1] >= count:
                break
        return FarfieldSnapshotSpace(pp.patch, pp.V1, values, gram, count, method, sel, R)
    else:
        raise ValueError(f"unknown snapshot method {method!r}")
    M1 = hier.subset_matrix(pp.tris[1], "M")[pp.V1][:, pp.V1]
    gram = _gram(values, M1)
    return FarfieldSnapshotSpace(pp.patch, pp.V1, values, gram, count, method)


def _sym(G: np.ndarray) -> np.ndarray:
    return 0.5 * (G + G.T)


def _gram(values: np.ndarray, M: sp.spmatrix) -> np.ndarray:
    return _sym(values.T @ (M @ values))


# -- intermediate layers and covers ----------------------------------------------


def layer_radii(ell: int, r1: float) -> np.ndarray:
    if ell < 2:
        raise ValueError("need at least two layers")
    if r1 <= 0:
        raise ValueError(f"degenerate first radius {r1}")
    j = np.arange(1, ell + 1)
    radii = (1.0 - (j - 1) / (ell - 1)) * r1
    radii[-1] = 0.0
    return radii


@dataclass(eq=False)
class Region:
    """Union of fine triangles ``tris`` of ``mesh``, optionally with an exact membership predicate."""

    mesh: TriMesh
    tris: np.ndarray
    radius: float = float("nan")
    predicate: object = None

    def contains(self, pts: np.ndarray) -> np.ndarray:
        if self.predicate is None:
            return _in_triangles(self.mesh, self.tris, pts)
        return self.predicate(pts)

    @property
    def points(self) -> np.ndarray:
        return self.mesh.vertices[np.unique(self.mesh.triangles[self.tris])]

    def bbox(self) -> np.ndarray:
        p = self.points
        return np.array([p[:, 0].min(), p[:, 0].max(), p[:, 1].min(), p[:, 1].max()])

    def diameter(self) -> float:
        p = self.points
        try:
            p = p[ConvexHull(p).vertices]
        except (QhullError, ValueError):
            pass
        d = p[:, None, :] - p[None, :, :]
        return float(np.sqrt((d ** 2).sum(-1)).max())


def _in_triangles(mesh: TriMesh, tris: np.ndarray, pts: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    p = mesh.vertices[mesh.triangles[tris]]
    a = p[:, 0]
    d1 = p[:, 1] - a
    d2 = p[:, 2] - a
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    out = np.zeros(len(pts), dtype=bool)
    for s in range(0, len(pts), 512):
        q = pts[s : s + 512, None, :] - a
        l1 = (q[..., 0] * d2[:, 1] - q[..., 1] * d2[:, 0]) / det
        l2 = (d1[:, 0] * q[..., 1] - d1[:, 1] * q[..., 0]) / det
        out[s : s + 512] = np.any((l1 >= -tol) & (l2 >= -tol) & (l1 + l2 <= 1 + tol), axis=1)
    return out


def first_radius(coarse: TriMesh, patch: Patch) -> float:
    """dist(omega_i, boundary of the first layer minus the domain boundary)."""
    inner = boundary_segments(coarse, patch.omega[0])
    outer = boundary_segments(coarse, patch.omega[1], exclude_domain_boundary=True)
    return segment_distance(inner, outer)


def build_layers(pp: PatchProblem, radii: np.ndarray) -> list[Region]:
    """Nested regions ``D_1 ... D_ell`` (preceded by ``D_0``, the whole first layer).

    Integration uses the fine triangles of the first layer whose centroid is
    within the radius of ``omega_i``; ``contains`` evaluates the exact set.
    """
    coarse, fine = pp.hier.coarse, pp.hier.fine
    omega_i = pp.patch.omega[0]
    seg = boundary_segments(coarse, omega_i)
    tris1 = pp.tris[1]
    anc = pp.hier.ancestor(0)[tris1]
    dist = point_segment_distance(fine.centroids[tris1], seg)
    dist[np.isin(anc, omega_i)] = 0.0

    def dist_to_omega(pts):
        d = point_segment_distance(pts, seg)
        d[_in_triangles(coarse, omega_i, pts)] = 0.0
        return d

    def make_pred(r):
        return lambda pts: _in_triangles(coarse, pp.patch.omega[1], pts) & (dist_to_omega(pts) <= r + 1e-12)

    regions = [Region(fine, tris1, float("inf"), lambda pts: _in_triangles(coarse, pp.patch.omega[1], pts))]
    for r in radii:
        regions.append(Region(fine, tris1[dist <= r + 1e-12], float(r), make_pred(float(r))))
    return regions


@dataclass(eq=False)
class Cover:
    """Cartesian cells intersecting a region, with exact P1 moments of the clipped indicators."""

    boxes: np.ndarray  # (m, 4): xmin, xmax, ymin, ymax
    areas: np.ndarray
    moments: sp.csr_matrix  # fine vertices x cells
    rho: float


def cartesian_cover(region: Region, k: int, area_tol: float = 1e-12) -> Cover:
    if k < 1:
        raise ValueError("k must be positive")
    mesh = region.mesh
    diam = region.diameter()
    rho = diam / k
    x0, x1, y0, y1 = region.bbox()
    nx = max(1, _ceil((x1 - x0) / rho))
    ny = max(1, _ceil((y1 - y0) / rho))
    tri_pts = mesh.vertices[mesh.triangles[region.tris]]
    lo = tri_pts.min(axis=1)
    hi = tri_pts.max(axis=1)
    ix0 = np.clip(np.floor((lo[:, 0] - x0) / rho + 1e-12).astype(int), 0, nx - 1)
    ix1 = np.clip(np.ceil((hi[:, 0] - x0) / rho - 1e-12).astype(int) - 1, 0, nx - 1)
    iy0 = np.clip(np.floor((lo[:, 1] - y0) / rho + 1e-12).astype(int), 0, ny - 1)
    iy1 = np.clip(np.ceil((hi[:, 1] - y0) / rho - 1e-12).astype(int) - 1, 0, ny - 1)
    ix1 = np.maximum(ix1, ix0)
    iy1 = np.maximum(iy1, iy0)
    # enumerate (triangle, cell) candidate pairs
    span_x = ix1 - ix0 + 1
    span_y = iy1 - iy0 + 1
    counts = span_x * span_y
    tri_idx = np.repeat(np.arange(len(region.tris)), counts)
    offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    cx = ix0[tri_idx] + offs % span_x[tri_idx]
    cy = iy0[tri_idx] + offs // span_x[tri_idx]
    single = counts[tri_idx] == 1
    mom = np.empty((len(tri_idx), 3))
    area = np.empty(len(tri_idx))
    areas_t = mesh.areas[region.tris]
    mom[single] = (areas_t[tri_idx[single]] / 3.0)[:, None]
    area[single] = areas_t[tri_idx[single]]
    multi = ~single
    if np.any(multi):
        boxes = np.column_stack(
            [x0 + cx[multi] * rho, x0 + (cx[multi] + 1) * rho, y0 + cy[multi] * rho, y0 + (cy[multi] + 1) * rho]
        )
        # cells on the last row/column extend to the bbox edge
        T = tri_pts[tri_idx[multi]]
        P, n = clipping.clip_to_boxes(T, boxes)
        mom[multi] = clipping.hat_moments(T, P, n)
        area[multi] = clipping.polygon_area(P, n)
    cell = cy * nx + cx
    cell_area = np.bincount(cell, weights=area, minlength=nx * ny)
    keep = np.flatnonzero(cell_area >= area_tol)
    remap = np.full(nx * ny, -1)
    remap[keep] = np.arange(len(keep))
    ok = remap[cell] >= 0
    verts = mesh.triangles[region.tris[tri_idx[ok]]]
    cols = np.repeat(remap[cell[ok]], 3)
    moments = sp.csr_matrix((mom[ok].ravel(), (verts.ravel(), cols)), shape=(mesh.n_vertices, len(keep)))
    kx, ky = keep % nx, keep // nx
    boxes = np.column_stack([x0 + kx * rho, x0 + (kx + 1) * rho, y0 + ky * rho, y0 + (ky + 1) * rho])
    return Cover(boxes, cell_area[keep], moments, rho)


# -- compression -----------------------------------------------------------------


@dataclass(eq=False)
class CompressedFarfield:
    values: np.ndarray  # on the fine vertices of omega_i, L2(omega_i)-orthonormal
    extended: np.ndarray  # the same functions on the first layer
    candidates: int


def compress_farfield(pp: PatchProblem, snaps: FarfieldSnapshotSpace, covers: list[Cover]) -> CompressedFarfield:
    """Project every cover-cell indicator onto the snapshot space and keep an independent set on omega_i."""
    if not covers or snaps.rank == 0:
        z = np.zeros((len(pp.V0), 0))
        return CompressedFarfield(z, np.zeros((len(pp.V1), 0)), 0)
    moments = sp.hstack([c.moments for c in covers]).tocsr()[snaps.vertices]
    coeffs = snaps.project_coefficients(moments)
    basis = snaps.values[:, snaps.sel]
    idx0 = np.searchsorted(snaps.vertices, pp.V0)
    F = basis[idx0] @ coeffs
    M0 = pp.hier.subset_matrix(pp.tris[0], "M")[pp.V0][:, pp.V0]
    G = _gram(F, M0)
    sel, R = pivoted_gram(G)
    T = sla.solve_triangular(R, np.eye(len(sel)), lower=False) if len(sel) else np.zeros((0, 0))
    if len(sel):
        # second pass restores orthonormality lost to the conditioning of G
        R2 = np.linalg.cholesky(_gram(F[:, sel] @ T, M0)).T
        T = sla.solve_triangular(R2.T, T.T, lower=True).T
    values = F[:, sel] @ T
    extended = basis @ (coeffs[:, sel] @ T)
    return CompressedFarfield(values, extended, F.shape[1])


# -- node basis and the full set -------------------------------------------------


@dataclass(eq=False)
class NodeBasis:
    node: int
    vertices: np.ndarray  # fine vertices where the functions may be nonzero
    values: np.ndarray  # near functions, then far functions, as columns
    n_near: int
    params: ALParameters
    diagnostics: dict = field(default_factory=dict)

    @property
    def near(self) -> np.ndarray:
        return self.values[:, : self.n_near]

    @property
    def far(self) -> np.ndarray:
        return self.values[:, self.n_near :]

    @property
    def dims(self) -> tuple[int, int]:
        return self.n_near, self.values.shape[1] - self.n_near

    @property
    def size(self) -> int:
        return sum(self.dims)


def multiply_by_hat(hier: FineHierarchy, node: int, values: np.ndarray, verts: np.ndarray):
    """Nodal interpolant of ``b_node * v`` on the fine mesh, kept where the hat is nonzero.

    Vertices on the domain boundary are dropped; patch functions vanish there.

    Returns ``(support_vertices, products)``.
    """
    b = hier.hat(node)[verts]
    keep = (b > 0) & ~hier.fine.boundary_vertex[verts]
    return verts[keep], b[keep, None] * np.asarray(values).reshape(len(verts), -1)[keep]


def build_node_basis(
    hier: FineHierarchy,
    node: int,
    *,
    H: float | None = None,
    c0: float = 1.0,
    t: int | None = None,
    snapshot_method: str = "sketch",
    snapshot_cap: int = SNAPSHOT_CAP,
    check_harmonic: bool = False,
) -> NodeBasis:
    pp = PatchProblem(hier, node)
    patch = pp.patch
    H = hier.coarse.h if H is None else H
    params = select_parameters(patch.H_i, H, c0)
    if t is not None:
        params = ALParameters(params.ell, params.k, int(t), c0)
    near = build_nearfield(pp)
    snaps = build_farfield_snapshots(pp, params, method=snapshot_method, cap=snapshot_cap)
    r1 = first_radius(hier.coarse, patch)
    if not np.isfinite(r1):
        # the first layer has no boundary inside the domain: D_1 is all of it
        r1 = float(point_segment_distance(hier.fine.centroids[pp.tris[1]],
                                          boundary_segments(hier.coarse, patch.omega[0])).max())
    radii = layer_radii(params.ell, r1)
    layers = build_layers(pp, radii)
    covers = [cartesian_cover(layer, params.k) for layer in layers[1:]]
    comp = compress_farfield(pp, snaps, covers)
    verts, near_vals = multiply_by_hat(hier, node, pp.on(near, pp.V0), pp.V0)
    _, far_vals = multiply_by_hat(hier, node, comp.values, pp.V0)
    diag = {
        "snapshot_count": snaps.snapshot_count,
        "snapshot_rank": snaps.rank,
        "far_candidates": comp.candidates,
        "cover_cells": [len(c.areas) for c in covers],
        "r1": float(radii[0]),
    }
    if check_harmonic:
        diag["harmonic_snapshots"] = float(pp.harmonic_residual(snaps.values).max(initial=0.0))
        diag["harmonic_far"] = float(pp.harmonic_residual(comp.extended).max(initial=0.0))
    return NodeBasis(node, verts, np.hstack([near_vals, far_vals]), near_vals.shape[1], params, diag)


@dataclass(eq=False)
class ALBasisSet:
    hier: FineHierarchy
    nodes: list[NodeBasis]

    @property
    def fine(self) -> TriMesh:
        return self.hier.fine

    @property
    def dimension(self) -> int:
        return sum(nb.size for nb in self.nodes)

    def dof_map(self) -> dict[tuple[int, int], int]:
        """(node, local index) -> global column; near functions precede far ones."""
        out, col = {}, 0
        for nb in self.nodes:
            for j in range(nb.size):
                out[(nb.node, j)] = col
                col += 1
        return out

    def matrix(self) -> sp.csc_matrix:
        """Fine vertex values of all basis functions as columns (deterministic order)."""
        if "_matrix" not in self.__dict__:
            rows, cols, vals = [], [], []
            col = 0
            for nb in self.nodes:
                block = nb.values
                m = block.shape[1]
                rows.append(np.repeat(nb.vertices, m))
                cols.append(np.tile(np.arange(col, col + m), len(nb.vertices)))
                vals.append(block.ravel())
                col += m
            n = self.fine.n_vertices
            self.__dict__["_matrix"] = sp.csc_matrix(
                (np.concatenate(vals) if vals else [], (np.concatenate(rows) if rows else [], np.concatenate(cols) if cols else [])),
                shape=(n, col),
            )
        return self.__dict__["_matrix"]


def build_al_basis(
    coarse: TriMesh,
    coef: Coefficient,
    *,
    c0: float = 1.0,
    t: int | None = None,
    depth_offset: int = 2,
    depth: int | None = None,
    snapshot_method: str = "sketch",
    snapshot_cap: int = SNAPSHOT_CAP,
    nodes=None,
    boundary_nodes: bool = True,
    check_harmonic: bool = False,
    hier: FineHierarchy | None = None,
) -> ALBasisSet:
    """AL basis for the vertices of ``coarse``.

    By default every vertex carries functions: products of a boundary hat
    with patch functions (which vanish on the domain boundary) still have
    zero trace, and without them the hats of the interior vertices do not
    sum to one on the triangles touching the boundary. ``boundary_nodes=False``
    restricts the basis to the interior vertices.

    The fine mesh depth defaults to the natural ring refinement ``t`` (from
    the global mesh width) plus ``depth_offset``; an explicit ``t`` only
    changes the ring refinement, not the fine mesh.
    """
    H = coarse.h
    t_nat = select_parameters(H, H, c0).t
    if hier is None:
        d = t_nat + depth_offset if depth is None else depth
        hier = FineHierarchy(coarse, d, coef)
    if nodes is None:
        nodes = np.arange(coarse.n_vertices) if boundary_nodes else basis_nodes(coarse)
    out = [
        build_node_basis(hier, int(i), H=H, c0=c0, t=t, snapshot_method=snapshot_method,
                         snapshot_cap=snapshot_cap, check_harmonic=check_harmonic)
        for i in nodes
    ]
    return ALBasisSet(hier, out)


# -- export / import -------------------------------------------------------------


def export_basis(basis: ALBasisSet, directory) -> None:
    """Write ``manifest.json`` and ``arrays.npz`` (exact binary coefficient vectors)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "coarse_mesh": mesh_to_dict(basis.hier.coarse),
        "depth": basis.hier.depth,
        "coefficient": basis.hier.coef.values.tolist(),
        "nodes": [
            {"node": nb.node, "near_count": nb.dims[0], "far_count": nb.dims[1],
             "ell": nb.params.ell, "k": nb.params.k, "t": nb.params.t, "c0": nb.params.c0}
            for nb in basis.nodes
        ],
    }
    (d / "manifest.json").write_text(json.dumps(manifest))
    arrays = {}
    for nb in basis.nodes:
        arrays[f"v{nb.node}"] = nb.vertices
        arrays[f"near{nb.node}"] = nb.near
        arrays[f"far{nb.node}"] = nb.far
    np.savez(d / "arrays.npz", **arrays)


def import_basis(directory) -> ALBasisSet:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    coarse = mesh_from_dict(manifest["coarse_mesh"])
    depth = int(manifest["depth"])
    values = manifest["coefficient"]
    hier = FineHierarchy(coarse, depth, lambda fine: from_values(fine, values))
    data = np.load(d / "arrays.npz")
    nodes = []
    for rec in manifest["nodes"]:
        i = rec["node"]
        params = ALParameters(rec["ell"], rec["k"], rec["t"], rec["c0"])
        near = data[f"near{i}"]
        nodes.append(NodeBasis(i, data[f"v{i}"], np.hstack([near, data[f"far{i}"]]), near.shape[1], params))
    return ALBasisSet(hier, nodes)
