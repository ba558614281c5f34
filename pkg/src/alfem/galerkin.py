"""Global Galerkin system in the AL space and its solution."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .albasis import ALBasisSet
from .coefficient import Coefficient
from .fem import load_function, load_piecewise_constant, stiffness_matrix
from .mesh import TriMesh

RESIDUAL_TOL = 1e-10


class IndefiniteSystemError(np.linalg.LinAlgError):
    """Raised when the AL stiffness matrix is not numerically positive definite."""

    def __init__(self, message: str, nodes: tuple[int, int] | None = None):
        super().__init__(message)
        self.nodes = nodes


def fine_load(mesh: TriMesh, f) -> np.ndarray:
    """Full fine load vector; ``f`` is callable, a scalar, or per-triangle constants."""
    if callable(f):
        return load_function(mesh, f)
    vals = np.broadcast_to(np.asarray(f, dtype=float), (mesh.n_triangles,))
    return load_piecewise_constant(mesh, vals)


@dataclass(eq=False)
class ALSystem:
    basis: ALBasisSet
    B: sp.csr_matrix
    F: np.ndarray
    dof_map: dict
    K: sp.csr_matrix = field(repr=False)
    load: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.B.shape[0]

    @property
    def offsets(self) -> np.ndarray:
        return np.cumsum([0] + [nb.size for nb in self.basis.nodes])


def overlapping_pairs(basis: ALBasisSet) -> list[tuple[int, int]]:
    """Index pairs ``(a, b)``, ``a <= b``, of basis nodes whose supports share a coarse triangle."""
    coarse = basis.hier.coarse
    pos = np.full(coarse.n_vertices, -1)
    pos[[nb.node for nb in basis.nodes]] = np.arange(len(basis.nodes))
    pairs = set()
    for tri in coarse.triangles:
        idx = [int(pos[v]) for v in tri if pos[v] >= 0]
        for u in idx:
            for v in idx:
                if u <= v:
                    pairs.add((u, v))
    return sorted(pairs)


def assemble_al_system(basis: ALBasisSet, coef: Coefficient | None = None, f=1.0) -> ALSystem:
    """``B = Phi^T K Phi`` and ``F = Phi^T b`` through the fine stiffness matrix and load.

    Blocks are formed only for node pairs with overlapping supports; all
    other blocks are structurally zero.
    """
    fine = basis.fine
    K = basis.hier.K if coef is None else stiffness_matrix(fine, coef.on_refinement(fine))
    K = K.tocsc()
    b = fine_load(fine, f)
    nodes = basis.nodes
    offs = np.cumsum([0] + [nb.size for nb in nodes])
    blocks = [nb.values for nb in nodes]
    by_col: dict[int, list[int]] = {}
    for a, c in overlapping_pairs(basis):
        by_col.setdefault(c, []).append(a)
    rows, cols, vals = [], [], []
    for c, partners in by_col.items():
        Kc = K[:, nodes[c].vertices]
        support = np.unique(Kc.indices)
        W = np.asarray(Kc[support] @ blocks[c])  # K phi_c on its vertex support
        for a in partners:
            _, ia, iw = np.intersect1d(nodes[a].vertices, support, assume_unique=True, return_indices=True)
            blk = blocks[a][ia].T @ W[iw]
            r, q = np.meshgrid(np.arange(offs[a], offs[a + 1]), np.arange(offs[c], offs[c + 1]), indexing="ij")
            rows += [r.ravel()] + ([q.ravel()] if a != c else [])
            cols += [q.ravel()] + ([r.ravel()] if a != c else [])
            vals += [blk.ravel()] * (1 if a == c else 2)
    n = int(offs[-1])
    B = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)) if rows else sp.csr_matrix((n, n))
    B = ((B + B.T) * 0.5).tocsr()
    F = np.concatenate([blk.T @ b[nb.vertices] for blk, nb in zip(blocks, nodes)]) if nodes else np.zeros(0)
    return ALSystem(basis, B, F, basis.dof_map(), K, b)


@dataclass(eq=False)
class ALSolution:
    coefficients: np.ndarray
    values: np.ndarray  # fine vertex values
    residual: float
    mesh: TriMesh
    dropped: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    full_residual: float = 0.0
    dependent_nodes: tuple[int, int] | None = None


def reconstruct(basis: ALBasisSet, c: np.ndarray) -> np.ndarray:
    """Fine vertex values of ``sum_j c_j phi_j``."""
    out = np.zeros(basis.fine.n_vertices)
    o = 0
    for nb in basis.nodes:
        m = nb.size
        np.add.at(out, nb.vertices, nb.values @ c[o : o + m])
        o += m
    return out


def _refine(apply, A, rhs, y, steps: int = 3):
    """A few steps of iterative refinement of ``A y = rhs``."""
    nr = max(np.linalg.norm(rhs), 1e-300)
    for _ in range(steps):
        r = rhs - A @ y
        if np.linalg.norm(r) <= 1e-3 * RESIDUAL_TOL * nr:
            break
        y = y + apply(r)
    return y


def _leading_block(f: np.ndarray, r: int) -> np.ndarray:
    """Leading ``r x r`` block of a Fortran-ordered square array, compacted in its own buffer."""
    n = f.shape[0]
    if r == n:
        return f
    flat = f.reshape(-1, order="F")
    for j in range(r):
        flat[j * r : (j + 1) * r] = flat[j * n : j * n + r]
    return flat[: r * r].reshape((r, r), order="F")


def _solve_spd(system: ALSystem, rhs: np.ndarray, drop_tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Pivoted Cholesky solve of the diagonally scaled system; returns ``(c, kept_columns)``.

    Pivoting stops once the remaining Schur-complement diagonal drops below
    ``drop_tol`` (the scaled diagonal is one); the corresponding columns are
    numerically dependent on the kept ones and get zero coefficients.
    """
    B = system.B
    n = B.shape[0]
    d = np.sqrt(np.maximum(B.diagonal(), 0.0))
    if np.any(d <= 0):
        bad = int(np.flatnonzero(d <= 0)[0])
        node = _node_of(system, bad)
        raise IndefiniteSystemError(f"basis function {bad} of node {node} has zero energy", (node, node))
    S = sp.diags(1.0 / d)
    Bs = (S @ B @ S).tocsr()
    rs = rhs / d
    f, piv, rank, info = sla.lapack.dpstrf(Bs.toarray(order="F"), lower=0, tol=drop_tol, overwrite_a=1)
    if info < 0 or rank == 0:
        raise IndefiniteSystemError(f"pivoted factorization failed (info={info})")
    sel = piv[:rank] - 1
    R = _leading_block(f, rank)  # only the upper triangle is read below
    sub = Bs[sel][:, sel]

    def apply(r):
        y = sla.solve_triangular(R, r, trans="T", lower=False, check_finite=False)
        return sla.solve_triangular(R, y, lower=False, check_finite=False)

    y = np.zeros(n)
    y[sel] = _refine(apply, sub, rs[sel], apply(rs[sel]))
    return y / d, np.sort(sel)


def _node_of(system: ALSystem, col: int) -> int:
    a = int(np.searchsorted(system.offsets, col, side="right") - 1)
    return system.basis.nodes[a].node


def dependent_pair(system: ALSystem, dropped: np.ndarray, kept: np.ndarray) -> tuple[int, int] | None:
    """A (dropped node, node it depends on) pair: the kept column with largest scaled coupling."""
    if len(dropped) == 0:
        return None
    B = system.B
    d = np.sqrt(B.diagonal())
    j = int(dropped[0])
    row = np.abs(B[j].toarray().ravel()) / (d * d[j])
    row[j] = 0
    mask = np.zeros(len(row), dtype=bool)
    mask[kept] = True
    k = int(np.argmax(np.where(mask, row, -1)))
    return _node_of(system, j), _node_of(system, k)


def solve_al(system: ALSystem, check: bool = True, drop_tol: float = 1e-12, allow_drop: bool = True) -> ALSolution:
    """Coefficients and fine vertex values of the Galerkin solution in the AL space.

    The residual is measured on the rows of the retained (independent)
    basis functions; columns dropped as numerically dependent get zero
    coefficients and are listed in ``dropped``. With ``allow_drop=False``
    any dependence raises IndefiniteSystemError naming a node pair.
    """
    F = system.F
    n = len(F)
    if not np.any(F):
        c, keep = np.zeros_like(F), np.arange(n)
    else:
        c, keep = _solve_spd(system, F, drop_tol)
    dropped = np.setdiff1d(np.arange(n), keep)
    pair = dependent_pair(system, dropped, keep)
    if len(dropped) and not allow_drop:
        raise IndefiniteSystemError(f"{len(dropped)} numerically dependent basis functions", pair)
    nF = np.linalg.norm(F[keep])
    res = float(np.linalg.norm((system.B @ c - F)[keep]) / nF) if nF > 0 else 0.0
    full = float(np.linalg.norm(system.B @ c - F) / np.linalg.norm(F)) if np.any(F) else 0.0
    if check and res > RESIDUAL_TOL:
        raise np.linalg.LinAlgError(f"AL solve residual {res:.2e} exceeds {RESIDUAL_TOL:.0e}")
    return ALSolution(c, reconstruct(system.basis, c), res, system.basis.fine, dropped, full, pair)


def condition_estimate(system: ALSystem) -> dict:
    """Extreme Ritz values of the diagonally scaled AL matrix (reported, not bounded)."""
    B = system.B
    d = np.sqrt(B.diagonal())
    Bs = (sp.diags(1 / d) @ B @ sp.diags(1 / d)).tocsc()
    n = Bs.shape[0]
    if n <= 2000:
        w = np.linalg.eigvalsh(Bs.toarray())
        lo, hi = float(w[0]), float(w[-1])
    else:
        hi = float(spla.eigsh(Bs, k=1, which="LA", return_eigenvectors=False)[0])
        lo = float(spla.eigsh(Bs, k=1, sigma=0.0, which="LM", return_eigenvectors=False)[0])
    return {"lambda_min": lo, "lambda_max": hi, "condition": hi / lo if lo > 0 else float("inf")}


@dataclass(frozen=True)
class DimensionReport:
    per_node: dict  # node -> (near, far)
    total: int
    n_nodes: int
    ell_max: int

    @property
    def ratio(self) -> float:
        """total / (N ell^3), the normalized size for d = 2."""
        return self.total / (self.n_nodes * self.ell_max ** 3)

    def to_dict(self) -> dict:
        return {
            "per_node": {str(k): list(v) for k, v in self.per_node.items()},
            "total": self.total,
            "n_nodes": self.n_nodes,
            "ell_max": self.ell_max,
            "ratio": self.ratio,
        }


def dimension_report(basis: ALBasisSet) -> DimensionReport:
    per = {nb.node: nb.dims for nb in basis.nodes}
    ell = max((nb.params.ell for nb in basis.nodes), default=2)
    return DimensionReport(per, sum(a + b for a, b in per.values()), len(basis.nodes), ell)


def export_solution(sol: ALSolution, path) -> None:
    data = {"vertices": sol.mesh.vertices.tolist(), "values": sol.values.tolist()}
    Path(path).write_text(json.dumps(data))


def export_system(system: ALSystem, path) -> None:
    """Coordinate text format: one ``row col value`` line per stored entry of B."""
    C = system.B.tocoo()
    with open(path, "w") as fh:
        fh.write(f"% {C.shape[0]} {C.shape[1]} {C.nnz}\n")
        for i, j, v in zip(C.row, C.col, C.data):
            fh.write(f"{i} {j} {float(v)!r}\n")
