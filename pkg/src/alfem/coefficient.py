"""Piecewise constant diffusion tensors with ellipticity bounds."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import TOL, TriMesh

# Knuth's MMIX constants; fixed so seeded fields are platform independent.
LCG_MULTIPLIER = 6364136223846793005
LCG_INCREMENT = 1442695040888963407
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True, eq=False)
class Coefficient:
    """Symmetric 2x2 matrix per triangle of ``resolution_mesh``.

    ``values`` has rows ``[a11, a12, a22]``.
    """

    resolution_mesh: TriMesh
    values: np.ndarray
    alpha: float
    beta: float

    @property
    def contrast(self) -> float:
        return self.beta / self.alpha

    def matrices(self) -> np.ndarray:
        a11, a12, a22 = self.values.T
        return np.stack([np.stack([a11, a12], -1), np.stack([a12, a22], -1)], -2)

    def on_refinement(self, fine: TriMesh) -> "Coefficient":
        """Inherit values on a mesh produced by ``refine_red(resolution_mesh, t)``."""
        if fine is self.resolution_mesh:
            return self
        cache = self.__dict__.setdefault("_refined", [])
        for mesh, coef in cache:
            if mesh is fine:
                return coef
        res = self.resolution_mesh
        ratio = fine.n_triangles // max(res.n_triangles, 1)
        if (
            fine.parent is None
            or len(fine.parent) != fine.n_triangles
            or fine.n_triangles != ratio * res.n_triangles
            or ratio < 4
            or ratio & (ratio - 1)
            or fine.parent.max() != res.n_triangles - 1
            or np.any(np.bincount(fine.parent, minlength=res.n_triangles) != ratio)
        ):
            raise ValueError("mesh is not a refinement of the coefficient's resolution mesh")
        coef = Coefficient(fine, self.values[fine.parent], self.alpha, self.beta)
        cache.append((fine, coef))
        return coef


def eigen_bounds(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form eigenvalues of symmetric 2x2 matrices ``[a11, a12, a22]``."""
    a11, a12, a22 = np.asarray(values, dtype=float).T
    mean = 0.5 * (a11 + a22)
    rad = np.hypot(0.5 * (a11 - a22), a12)
    return mean - rad, mean + rad


def ellipticity_bounds(coef_or_values) -> tuple[float, float]:
    values = coef_or_values.values if isinstance(coef_or_values, Coefficient) else coef_or_values
    lo, hi = eigen_bounds(values)
    alpha, beta = float(lo.min()), float(hi.max())
    if alpha <= 0:
        raise ValueError(f"coefficient is not uniformly elliptic (alpha = {alpha:g})")
    return alpha, beta


def from_matrices(mesh: TriMesh, matrices) -> Coefficient:
    """Build from full per-triangle 2x2 matrices, rejecting asymmetric entries."""
    A = np.asarray(matrices, dtype=float)
    if A.shape == (2, 2):
        A = np.broadcast_to(A, (mesh.n_triangles, 2, 2))
    if A.shape != (mesh.n_triangles, 2, 2):
        raise ValueError(f"expected ({mesh.n_triangles}, 2, 2) matrices, got {A.shape}")
    asym = np.abs(A[:, 0, 1] - A[:, 1, 0])
    if np.any(asym > 1e-12):
        raise ValueError(f"asymmetric coefficient entry (|a12 - a21| = {asym.max():g})")
    values = np.column_stack([A[:, 0, 0], A[:, 0, 1], A[:, 1, 1]])
    return from_values(mesh, values)


def from_values(mesh: TriMesh, values) -> Coefficient:
    values = np.array(values, dtype=float).reshape(-1, 3)
    if len(values) != mesh.n_triangles:
        raise ValueError(f"{len(values)} coefficient rows for {mesh.n_triangles} triangles")
    alpha, beta = ellipticity_bounds(values)
    return Coefficient(mesh, values, alpha, beta)


def scalar_field(mesh: TriMesh, a) -> Coefficient:
    a = np.broadcast_to(np.asarray(a, dtype=float), (mesh.n_triangles,))
    return from_values(mesh, np.column_stack([a, np.zeros_like(a), a]))


def identity(mesh: TriMesh) -> Coefficient:
    return scalar_field(mesh, 1.0)


def _cell_index(mesh: TriMesh, cells_per_side: int) -> np.ndarray:
    """(ix, iy) of the checkerboard cell containing each triangle of the unit-square-like domain."""
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    scaled = (mesh.vertices[mesh.triangles] - lo) / (hi - lo) * cells_per_side
    c = scaled.mean(axis=1)
    idx = np.clip(np.floor(c), 0, cells_per_side - 1).astype(int)
    # every vertex must lie in the closed cell of the centroid
    inside = (scaled >= idx[:, None, :] - TOL * cells_per_side) & (
        scaled <= idx[:, None, :] + 1 + TOL * cells_per_side
    )
    bad = ~inside.all(axis=(1, 2))
    if np.any(bad):
        raise ValueError(
            f"{int(bad.sum())} triangles straddle a cell boundary; refine the resolution mesh"
        )
    return idx


def make_checkerboard(cells_per_side: int, low: float, high: float, resolution_mesh: TriMesh) -> Coefficient:
    if low <= 0 or high <= 0:
        raise ValueError("checkerboard values must be positive")
    idx = _cell_index(resolution_mesh, cells_per_side)
    a = np.where((idx[:, 0] + idx[:, 1]) % 2 == 0, float(low), float(high))
    return scalar_field(resolution_mesh, a)


def lcg_uniform(seed: int, count: int) -> np.ndarray:
    """``count`` doubles in [0, 1) from the 64-bit LCG (top 53 bits of each state)."""
    state = seed & _MASK64
    out = np.empty(count)
    for i in range(count):
        state = (LCG_MULTIPLIER * state + LCG_INCREMENT) & _MASK64
        out[i] = (state >> 11) * (1.0 / (1 << 53))
    return out


def make_random_lognormal_like(cells_per_side: int, contrast: float, seed: int, resolution_mesh: TriMesh) -> Coefficient:
    """Per-cell scalar ``contrast**u`` with ``u`` uniform from the seeded LCG.

    Cells are numbered row by row from the lower-left corner.
    """
    if contrast < 1:
        raise ValueError("contrast must be >= 1")
    idx = _cell_index(resolution_mesh, cells_per_side)
    u = lcg_uniform(seed, cells_per_side * cells_per_side)
    cell_vals = np.float64(contrast) ** u
    a = cell_vals[idx[:, 1] * cells_per_side + idx[:, 0]]
    return scalar_field(resolution_mesh, a)


def coefficient_from_dict(spec: dict, mesh: TriMesh) -> Coefficient:
    """Build from the JSON description ``{"kind": ..., ...}``."""
    kind = spec.get("kind")
    if kind == "checkerboard":
        return make_checkerboard(int(spec["cells"]), float(spec["low"]), float(spec["high"]), mesh)
    if kind == "random":
        return make_random_lognormal_like(
            int(spec["cells"]), float(spec["contrast"]), int(spec["seed"]), mesh
        )
    if kind == "constant":
        A = spec.get("matrix", [[1.0, 0.0], [0.0, 1.0]])
        return from_matrices(mesh, A)
    if kind == "file":
        return from_values(mesh, spec["values"])
    raise ValueError(f"unknown coefficient kind {kind!r}")


def coefficient_to_dict(coef: Coefficient) -> dict:
    return {"kind": "file", "values": coef.values.tolist()}
