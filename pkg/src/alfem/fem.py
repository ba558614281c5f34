"""P1 finite element machinery: assembly, Dirichlet solves, projections and norms."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficient import Coefficient
from .mesh import TriMesh, prolongation

# systems larger than this go to AMG-preconditioned CG instead of SuperLU
DIRECT_SOLVE_LIMIT = 400_000


def p1_gradients(mesh: TriMesh) -> np.ndarray:
    """Gradients of the three barycentric coordinates per triangle, shape (nt, 3, 2)."""
    if "grads" not in mesh._cache:
        p = mesh.vertices[mesh.triangles]
        area2 = 2.0 * mesh.areas
        # grad lambda_j = rot90(p_{j+2} - p_{j+1}) / (2|T|)
        g = np.empty((mesh.n_triangles, 3, 2))
        for j in range(3):
            e = p[:, (j + 2) % 3] - p[:, (j + 1) % 3]
            g[:, j, 0] = -e[:, 1] / area2
            g[:, j, 1] = e[:, 0] / area2
        mesh._cache["grads"] = g
    return mesh._cache["grads"]


def element_stiffness(mesh: TriMesh, values: np.ndarray | None = None) -> np.ndarray:
    """Element matrices ``|T| G A G^T``, shape (nt, 3, 3)."""
    g = p1_gradients(mesh)
    if values is None:
        Ag = g
    else:
        a11, a12, a22 = values[:, 0, None], values[:, 1, None], values[:, 2, None]
        Ag = np.stack([a11 * g[..., 0] + a12 * g[..., 1], a12 * g[..., 0] + a22 * g[..., 1]], -1)
    return mesh.areas[:, None, None] * np.einsum("tik,tjk->tij", g, Ag)


def _symmetric_assemble(mesh: TriMesh, Ke: np.ndarray) -> sp.csr_matrix:
    # Only the upper local pairs are scattered and then mirrored, so K == K.T bitwise.
    t = mesh.triangles
    nv = mesh.n_vertices
    pairs = [(0, 1), (0, 2), (1, 2)]
    i = np.concatenate([t[:, a] for a, _ in pairs])
    j = np.concatenate([t[:, b] for _, b in pairs])
    v = np.concatenate([0.5 * (Ke[:, a, b] + Ke[:, b, a]) for a, b in pairs])
    r, c = np.minimum(i, j), np.maximum(i, j)
    U = sp.csr_matrix((v, (r, c)), shape=(nv, nv))
    diag = np.bincount(t.ravel(), weights=np.stack([Ke[:, k, k] for k in range(3)], 1).ravel(), minlength=nv)
    return (U + U.T + sp.diags(diag)).tocsr()


def stiffness_matrix(mesh: TriMesh, coef: Coefficient | None = None) -> sp.csr_matrix:
    """Full (all vertices) stiffness matrix; ``coef=None`` means A = I."""
    if coef is None:
        key = "K_identity"
        cache = mesh._cache
        values = None
    else:
        coef = coef.on_refinement(mesh)
        key = "K"
        cache = coef.__dict__.setdefault("_fem_cache", {})
        values = coef.values
    if key not in cache:
        cache[key] = _symmetric_assemble(mesh, element_stiffness(mesh, values))
    return cache[key]


def mass_matrix(mesh: TriMesh) -> sp.csr_matrix:
    if "M" not in mesh._cache:
        local = (np.ones((3, 3)) + np.eye(3)) / 12.0
        Ke = mesh.areas[:, None, None] * local
        mesh._cache["M"] = _symmetric_assemble(mesh, Ke)
    return mesh._cache["M"]


@dataclass(frozen=True, eq=False)
class FESpace:
    """P1 functions on ``mesh`` that vanish outside the vertices listed in ``free``."""

    mesh: TriMesh
    free: np.ndarray
    kind: str = "global"

    @property
    def n_dofs(self) -> int:
        return len(self.free)

    def extend(self, x: np.ndarray) -> np.ndarray:
        """Free-dof values -> values at all mesh vertices (zero elsewhere)."""
        x = np.asarray(x)
        full = np.zeros((self.mesh.n_vertices,) + x.shape[1:], dtype=x.dtype if x.dtype.kind == "f" else float)
        full[self.free] = x
        return full

    def restrict(self, full: np.ndarray) -> np.ndarray:
        return np.asarray(full)[self.free]

    def restriction_matrix(self) -> sp.csr_matrix:
        n = self.n_dofs
        return sp.csr_matrix((np.ones(n), (np.arange(n), self.free)), shape=(n, self.mesh.n_vertices))


def global_space(mesh: TriMesh) -> FESpace:
    """Homogeneous Dirichlet space on the whole mesh."""
    return FESpace(mesh, np.flatnonzero(~mesh.boundary_vertex), "global")


def interior_vertices(mesh: TriMesh, tris: np.ndarray) -> np.ndarray:
    """Vertices strictly inside the region covered by ``tris`` and off the domain boundary."""
    v2t = mesh.vertex_to_triangles()
    total = np.diff(v2t.indptr)
    mark = np.zeros(mesh.n_triangles, dtype=np.int8)
    mark[tris] = 1
    inside = v2t @ mark
    verts = np.unique(mesh.triangles[tris])
    ok = (inside[verts] == total[verts]) & ~mesh.boundary_vertex[verts]
    return verts[ok]


def local_space(mesh: TriMesh, tris: np.ndarray, kind: str = "patch") -> FESpace:
    """Zero-trace P1 space on the union of ``tris`` (a patch of ``mesh``)."""
    return FESpace(mesh, interior_vertices(mesh, tris), kind)


class SparseSPD:
    """Symmetric positive definite sparse matrix with a lazily built solver."""

    def __init__(self, matrix: sp.spmatrix, *, method: str = "auto"):
        self.matrix = sp.csc_matrix(matrix)
        self.n = self.matrix.shape[0]
        self.method = method
        self._lu = None
        self._amg = None
        self._abs = None

    @property
    def shape(self):
        return self.matrix.shape

    def _use_direct(self) -> bool:
        if self.method == "auto":
            return self.n <= DIRECT_SOLVE_LIMIT
        return self.method == "direct"

    def factorize(self) -> "SparseSPD":
        if self._use_direct():
            if self._lu is None:
                try:
                    self._lu = spla.splu(self.matrix, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                         options={"SymmetricMode": True})
                except RuntimeError as err:
                    raise np.linalg.LinAlgError(f"factorization failed: {err}") from err
                # pivot-free LU of an SPD matrix has a positive diagonal in U
                d = self._lu.U.diagonal()
                if np.any(d <= 0) or not np.all(np.isfinite(d)):
                    raise np.linalg.LinAlgError("matrix is not positive definite")
        elif self._amg is None:
            import pyamg

            # classical AMG copes with coefficient jumps where smoothed aggregation stalls
            self._amg = pyamg.ruge_stuben_solver(self.matrix.tocsr(), max_levels=40, max_coarse=500,
                                                 coarse_solver="splu")
        return self

    def _amg_solve(self, b: np.ndarray, tol: np.ndarray) -> np.ndarray:
        x = self._amg.solve(b, tol=1e-12, accel="cg", maxiter=500)
        for _ in range(3):  # refinement against drift of the CG recurrence
            r = b - self.matrix @ x
            if np.linalg.norm(r) <= tol:
                break
            x = x + self._amg.solve(r, tol=1e-12, accel="cg", maxiter=500)
        return x

    def solve(self, b: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
        """Solve ``A x = b`` and verify ``|A x - b| <= rtol |b| + eps | |A| |x| |``.

        The second term is the rounding floor of evaluating the residual
        itself; it only matters for very large, fine systems.
        """
        b = np.asarray(b, dtype=float)
        if self.n == 0:
            return np.zeros_like(b)
        self.factorize()
        nb = np.linalg.norm(b.reshape(self.n, -1), axis=0)
        if self._lu is not None:
            x = self._lu.solve(b)
        else:
            cols = b.reshape(self.n, -1)
            x = np.empty_like(cols)
            for k in range(cols.shape[1]):
                x[:, k] = self._amg_solve(cols[:, k], 0.5 * rtol * nb[k])
            x = x.reshape(b.shape)
        xs = x.reshape(self.n, -1)
        res = np.linalg.norm(self.matrix @ xs - b.reshape(self.n, -1), axis=0)
        if self._abs is None:
            self._abs = abs(self.matrix)
        floor = np.finfo(float).eps * np.linalg.norm(self._abs @ np.abs(xs), axis=0)
        bad = res > rtol * nb + floor
        if np.any(bad):
            k = int(np.argmax(bad))
            raise np.linalg.LinAlgError(
                f"solve residual {res[k] / max(nb[k], 1e-300):.2e} exceeds {rtol:.0e} (rounding floor "
                f"{floor[k] / max(nb[k], 1e-300):.1e})"
            )
        return x


def assemble_stiffness(space: FESpace, coef: Coefficient | None = None) -> SparseSPD:
    K = stiffness_matrix(space.mesh, coef)
    return SparseSPD(K[space.free][:, space.free])


def assemble_mass(space: FESpace) -> sp.csr_matrix:
    M = mass_matrix(space.mesh)
    return M[space.free][:, space.free].tocsr()


def load_piecewise_constant(mesh: TriMesh, values: np.ndarray) -> np.ndarray:
    """Full load vector of a per-triangle constant function (exact)."""
    w = np.repeat(np.asarray(values, dtype=float) * mesh.areas / 3.0, 3)
    return np.bincount(mesh.triangles.ravel(), weights=w, minlength=mesh.n_vertices)


def characteristic_loads(mesh: TriMesh, owner: np.ndarray, n_owners: int) -> sp.csr_matrix:
    """Column ``c`` is the exact load of the indicator of the triangles with ``owner == c``."""
    t = mesh.triangles
    rows = t.ravel()
    cols = np.repeat(owner, 3)
    vals = np.repeat(mesh.areas / 3.0, 3)
    return sp.csr_matrix((vals, (rows, cols)), shape=(mesh.n_vertices, n_owners))


def load_function(mesh: TriMesh, f) -> np.ndarray:
    """Full load vector of an analytic ``f(x, y)`` using the edge-midpoint rule (degree 2)."""
    p = mesh.vertices[mesh.triangles]
    mids = [0.5 * (p[:, (j + 1) % 3] + p[:, (j + 2) % 3]) for j in range(3)]  # opposite vertex j
    fm = [np.broadcast_to(np.asarray(f(m[:, 0], m[:, 1]), dtype=float), (mesh.n_triangles,)) for m in mids]
    w = mesh.areas / 6.0
    # vertex j touches the midpoints of the two edges not opposite to it
    contrib = np.stack([w * (fm[(j + 1) % 3] + fm[(j + 2) % 3]) for j in range(3)], 1)
    return np.bincount(mesh.triangles.ravel(), weights=contrib.ravel(), minlength=mesh.n_vertices)


def assemble_load(space: FESpace, f) -> np.ndarray:
    """Load vector on the free dofs; ``f`` is callable, a scalar, or per-triangle constants."""
    mesh = space.mesh
    if callable(f):
        full = load_function(mesh, f)
    else:
        vals = np.broadcast_to(np.asarray(f, dtype=float), (mesh.n_triangles,))
        full = load_piecewise_constant(mesh, vals)
    return full[space.free]


@dataclass(frozen=True, eq=False)
class FEFunction:
    space: FESpace
    coefficients: np.ndarray
    _full: dict = field(default_factory=dict, repr=False)

    @property
    def values(self) -> np.ndarray:
        """Values at every vertex of the mesh."""
        if "v" not in self._full:
            self._full["v"] = self.space.extend(self.coefficients)
        return self._full["v"]

    def __call__(self, x, y=None):
        pts = np.asarray(x, dtype=float) if y is None else np.column_stack([np.ravel(x), np.ravel(y)])
        return evaluate(self.space.mesh, self.values, pts.reshape(-1, 2))


def evaluate(mesh: TriMesh, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Barycentric interpolation of vertex values at points (nan outside the mesh)."""
    p = mesh.vertices[mesh.triangles]
    a = p[:, 0]
    d1 = p[:, 1] - a
    d2 = p[:, 2] - a
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    out = np.full(len(pts), np.nan)
    for k, q in enumerate(pts):
        r = q - a
        l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
        l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
        l0 = 1.0 - l1 - l2
        hit = np.flatnonzero((l0 >= -1e-12) & (l1 >= -1e-12) & (l2 >= -1e-12))
        if len(hit):
            tri = hit[0]
            v = values[mesh.triangles[tri]]
            out[k] = l0[tri] * v[0] + l1[tri] * v[1] + l2[tri] * v[2]
    return out


def solve_dirichlet(A: SparseSPD, b: np.ndarray, space: FESpace | None = None):
    """Solve ``A x = b``; returns an FEFunction when ``space`` is given, else the array."""
    x = A.solve(b)
    return FEFunction(space, x) if space is not None else x


def transfer(values: np.ndarray, mesh: TriMesh, t: int) -> np.ndarray:
    """Exact representation of a P1 function on ``refine_red(mesh, t)``."""
    if t == 0:
        return values
    key = ("P", t)
    if key not in mesh._cache:
        mesh._cache[key] = prolongation(mesh, t)
    return mesh._cache[key] @ values


_DUNAVANT5 = (
    np.array(
        [
            [1 / 3, 1 / 3, 1 / 3],
            [0.059715871789770, 0.470142064105115, 0.470142064105115],
            [0.470142064105115, 0.059715871789770, 0.470142064105115],
            [0.470142064105115, 0.470142064105115, 0.059715871789770],
            [0.797426985353087, 0.101286507323456, 0.101286507323456],
            [0.101286507323456, 0.797426985353087, 0.101286507323456],
            [0.101286507323456, 0.101286507323456, 0.797426985353087],
        ]
    ),
    np.array([0.225, 0.132394152788506, 0.132394152788506, 0.132394152788506,
              0.125939180544827, 0.125939180544827, 0.125939180544827]),
)


def triangle_means(mesh: TriMesh, g) -> np.ndarray:
    """Mean of an analytic ``g`` on each triangle (7-point rule, degree 5)."""
    bary, w = _DUNAVANT5
    p = mesh.vertices[mesh.triangles]
    pts = np.einsum("qj,tjk->tqk", bary, p)
    vals = np.asarray(g(pts[..., 0], pts[..., 1]), dtype=float)
    vals = np.broadcast_to(vals, pts.shape[:2])
    return vals @ w


def project_piecewise_constant(g, target_mesh: TriMesh) -> np.ndarray:
    """L2 projection onto constants per triangle of ``target_mesh``.

    ``g`` is an FEFunction living on ``target_mesh`` or on a refinement of it
    (``mesh.parent`` indexing ``target_mesh``), or an analytic callable.
    """
    if isinstance(g, FEFunction):
        mesh = g.space.mesh
        means = g.values[mesh.triangles].mean(axis=1)  # exact for P1
        if mesh is target_mesh:
            return means
        if mesh.parent is None:
            raise ValueError("function mesh does not refine the target mesh")
        integral = np.bincount(mesh.parent, weights=means * mesh.areas, minlength=target_mesh.n_triangles)
        return integral / target_mesh.areas
    return triangle_means(target_mesh, g)


@dataclass(frozen=True)
class Norms:
    L2: float
    H1_semi: float
    energy: float


def norms(u, coef: Coefficient | None = None) -> Norms:
    """L2 norm, H1 seminorm and energy norm of a P1 function (all exact).

    ``u`` is an FEFunction or a pair ``(mesh, vertex_values)``.
    """
    if isinstance(u, FEFunction):
        mesh, v = u.space.mesh, u.values
    else:
        mesh, v = u
    l2 = float(np.sqrt(max(v @ (mass_matrix(mesh) @ v), 0.0)))
    h1 = float(np.sqrt(max(v @ (stiffness_matrix(mesh) @ v), 0.0)))
    en = h1 if coef is None else float(np.sqrt(max(v @ (stiffness_matrix(mesh, coef) @ v), 0.0)))
    return Norms(l2, h1, en)


def energy_norm(mesh: TriMesh, values: np.ndarray, coef: Coefficient | None = None) -> float:
    K = stiffness_matrix(mesh, coef)
    return float(np.sqrt(max(values @ (K @ values), 0.0)))


def discrete_hminus1_norm(g, space: FESpace) -> float:
    """``sqrt(b^T K^{-1} b)`` with K the Laplace stiffness and b the load of ``g``.

    ``g`` holds per-triangle constants on ``space.mesh`` or a full load vector
    (length ``n_vertices``) computed elsewhere.
    """
    g = np.asarray(g, dtype=float)
    if g.shape == (space.mesh.n_vertices,) and space.mesh.n_vertices != space.mesh.n_triangles:
        b = g[space.free]
    else:
        b = assemble_load(space, g)
    if not np.any(b):
        return 0.0
    K = assemble_stiffness(space)
    x = K.solve(b)
    return float(np.sqrt(max(b @ x, 0.0)))
