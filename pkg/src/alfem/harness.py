"""Convergence experiments: run configuration, reference solutions, reports."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import albasis
from .coefficient import coefficient_from_dict
from .fem import SparseSPD, stiffness_matrix
from .galerkin import assemble_al_system, dimension_report, fine_load, solve_al
from .mesh import TriMesh, build_structured_mesh, refine_red, refine_with_prolongation

CSV_COLUMNS = ("H", "N", "dim_al", "dim_fine", "err_al", "err_p1", "rate_al")
MAX_REFERENCE_DOFS = 5_000_000


class ResourceLimitError(MemoryError):
    def __init__(self, required: int, limit: int):
        super().__init__(f"reference solve needs {required} dofs, above the limit of {limit}")
        self.required = required
        self.limit = limit


@dataclass(frozen=True)
class RunConfig:
    levels: tuple = (4, 8, 16)
    domain: tuple = (0.0, 1.0, 0.0, 1.0)
    fine_depth_offset: int = 2
    coefficient: dict = field(default_factory=lambda: {"kind": "constant"})
    f: object = 1.0
    c0: float = 1.0
    t_override: int | None = None
    boundary_nodes: bool = True
    snapshot_method: str = "sketch"
    snapshot_cap: int = albasis.SNAPSHOT_CAP
    reference_extra_depth: int = 1
    max_reference_dofs: int = MAX_REFERENCE_DOFS
    seed: int = 0
    csv: str | None = None
    json: str | None = None
    cache_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(n) for n in self.levels))
        object.__setattr__(self, "domain", tuple(float(x) for x in self.domain))
        if not self.levels or any(n < 1 for n in self.levels):
            raise ValueError("levels must be positive subdivision counts")
        if list(self.levels) != sorted(set(self.levels)):
            raise ValueError("levels must be strictly increasing")
        if self.fine_depth_offset < 2:
            raise ValueError("the fine mesh must be at least two refinements below the ring refinement")
        if self.t_override is not None and self.t_override < 0:
            raise ValueError("t_override must be non-negative")
        if self.reference_extra_depth < 1:
            raise ValueError("the reference must be finer than every AL fine space")
        if self.snapshot_method not in ("sketch", "trace", "direct"):
            raise ValueError(f"unknown snapshot method {self.snapshot_method!r}")
        x0, x1, y0, y1 = self.domain
        if not (x1 > x0 and y1 > y0):
            raise ValueError("degenerate domain")
        for p in (self.csv, self.json):
            if p is not None and not Path(p).parent.exists():
                raise ValueError(f"output directory of {p} does not exist")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["levels"] = list(self.levels)
        d["domain"] = list(self.domain)
        return d

    def problem_hash(self) -> str:
        """Hash of everything that determines the numbers (not output paths)."""
        d = self.to_dict()
        for k in ("csv", "json", "cache_dir"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def reference_hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k in ("domain", "coefficient", "f", "fine_depth_offset",
                                                              "reference_extra_depth")}
        d["finest"] = self.levels[-1]
        d["depth"] = self.fine_depth(self.levels[-1])
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def natural_t(self, n: int) -> int:
        H = self.coarse_mesh(n).h
        return albasis.select_parameters(H, H, self.c0).t

    def fine_depth(self, n: int) -> int:
        return self.natural_t(n) + self.fine_depth_offset

    def coarse_mesh(self, n: int) -> TriMesh:
        return build_structured_mesh(n, self.domain)

    def coefficient_on(self, mesh: TriMesh):
        return coefficient_from_dict(self.coefficient, mesh)

    def load_vector(self, mesh: TriMesh) -> np.ndarray:
        return fine_load(mesh, make_rhs(self.f))


def make_rhs(spec):
    """Right-hand side from a number or ``{"kind": ...}``."""
    if isinstance(spec, (int, float)):
        return float(spec)
    kind = spec.get("kind")
    if kind == "constant":
        return float(spec.get("value", 1.0))
    if kind == "sin_sin":
        # -Laplace of sin(pi x) sin(pi y)
        return lambda x, y: 2 * math.pi ** 2 * np.sin(math.pi * x) * np.sin(math.pi * y)
    if kind == "sin_cos":
        a, b = float(spec.get("a", 3.0)), float(spec.get("b", 2.0))
        return lambda x, y: np.sin(a * x) * np.cos(b * y)
    raise ValueError(f"unknown right-hand side kind {kind!r}")


# -- reference ---------------------------------------------------------------------


@dataclass(eq=False)
class Reference:
    mesh: TriMesh
    values: np.ndarray
    K: sp.csr_matrix
    resolution: int  # grid points per unit of the reference lattice
    keys: np.ndarray  # lattice key of every reference vertex


_REFERENCE_CACHE: dict[str, np.ndarray] = {}  # solution vectors only; meshes are rebuilt


def _lattice_keys(mesh: TriMesh, domain, resolution: int) -> np.ndarray:
    x0, x1, y0, y1 = domain
    i = np.rint((mesh.vertices[:, 0] - x0) / (x1 - x0) * resolution).astype(np.int64)
    j = np.rint((mesh.vertices[:, 1] - y0) / (y1 - y0) * resolution).astype(np.int64)
    return i * (resolution + 1) + j


def reference_size(config: RunConfig) -> tuple[int, int]:
    """(lattice points per side, interior dofs) of the reference mesh."""
    n = config.levels[-1]
    side = n * 2 ** (config.fine_depth(n) + config.reference_extra_depth)
    return side, (side - 1) ** 2


def check_reference_size(config: RunConfig) -> None:
    _, dofs = reference_size(config)
    if dofs > config.max_reference_dofs:
        raise ResourceLimitError(dofs, config.max_reference_dofs)


def reference_solution(config: RunConfig) -> Reference:
    """Global fine solve one refinement below the finest AL fine space.

    Solutions are cached in memory (and on disk with ``cache_dir``) by a hash
    of the fields that determine them; mesh and matrix are rebuilt per call.
    """
    check_reference_size(config)
    key = config.reference_hash()
    n = config.levels[-1]
    side, _ = reference_size(config)
    mesh = refine_red(config.coarse_mesh(n), config.fine_depth(n) + config.reference_extra_depth)
    K = stiffness_matrix(mesh, config.coefficient_on(mesh))
    u = _REFERENCE_CACHE.get(key)
    cached = None if config.cache_dir is None else Path(config.cache_dir) / f"reference-{key}.npy"
    if u is None and cached is not None and cached.exists():
        u = np.load(cached)
    if u is None:
        b = config.load_vector(mesh)
        free = np.flatnonzero(~mesh.boundary_vertex)
        u = np.zeros(mesh.n_vertices)
        if np.any(b[free]):
            u[free] = SparseSPD(K[free][:, free]).solve(b[free])
        if cached is not None:
            cached.parent.mkdir(parents=True, exist_ok=True)
            np.save(cached, u)
    _REFERENCE_CACHE[key] = u
    return Reference(mesh, u, K, side, _lattice_keys(mesh, config.domain, side))


def to_reference(values: np.ndarray, mesh: TriMesh, depth_gap: int, ref: Reference, domain) -> np.ndarray:
    """Exact P1 transfer of vertex values on ``mesh`` to the (finer, nested) reference mesh."""
    fine, P = refine_with_prolongation(mesh, depth_gap)
    v = P @ values
    keys = _lattice_keys(fine, domain, ref.resolution)
    out = np.empty(ref.mesh.n_vertices)
    order = np.argsort(ref.keys)
    pos = order[np.searchsorted(ref.keys, keys, sorter=order)]
    out[pos] = v
    return out


def energy_error(ref: Reference, values_on_ref: np.ndarray) -> float:
    e = ref.values - values_on_ref
    return float(np.sqrt(max(e @ (ref.K @ e), 0.0)))


# -- convergence -------------------------------------------------------------------


@dataclass
class ConvergenceReport:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"rows": self.rows, "metadata": self.metadata}

    @classmethod
    def from_dict(cls, d: dict) -> "ConvergenceReport":
        return cls(list(d["rows"]), dict(d["metadata"]))


def coarse_p1(hier: albasis.FineHierarchy, load: np.ndarray) -> np.ndarray:
    """Standard P1 Galerkin solution on the coarse mesh (coefficient integrated on the fine mesh)."""
    P = hier.hats
    Kc = (P.T @ (hier.K @ P)).tocsr()
    free = np.flatnonzero(~hier.coarse.boundary_vertex)
    u = np.zeros(hier.coarse.n_vertices)
    if len(free):
        u[free] = SparseSPD(Kc[free][:, free]).solve((P.T @ load)[free])
    return u


def solve_level(config: RunConfig, n: int, log=None) -> dict:
    """AL and coarse P1 solutions of one level as fine vertex values, with diagnostics.

    Only the fine mesh and the two solution vectors are kept, so the basis
    is released before the next level (or the reference) is built.
    """
    t0 = time.perf_counter()
    coarse = config.coarse_mesh(n)
    depth = config.fine_depth(n)
    hier = albasis.FineHierarchy(coarse, depth, config.coefficient_on)
    basis = albasis.build_al_basis(
        coarse, None, c0=config.c0, t=config.t_override, hier=hier,
        boundary_nodes=config.boundary_nodes, snapshot_method=config.snapshot_method,
        snapshot_cap=config.snapshot_cap,
    )
    t_basis = time.perf_counter() - t0
    system = assemble_al_system(basis, f=make_rhs(config.f))
    sol = solve_al(system)
    t_solve = time.perf_counter() - t0 - t_basis
    dims = dimension_report(basis)
    params = [nb.params for nb in basis.nodes]
    ell = max(p.ell for p in params)
    detail = {
        "n": n,
        "fine_depth": depth,
        "ell_max": ell,
        "k_max": max(p.k for p in params),
        "t": params[0].t,
        "far_max": max(far for _, far in dims.per_node.values()),
        "far_bound_ok": all(nb.dims[1] <= nb.params.far_bound for nb in basis.nodes),
        "dim_ratio": dims.ratio,
        "dropped": int(len(sol.dropped)),
        "residual": sol.residual,
        "full_residual": sol.full_residual,
        "seconds_basis": t_basis,
        "seconds_solve": t_solve,
    }
    row = {
        "H": coarse.h,
        "N": dims.n_nodes,
        "dim_al": dims.total,
        "dim_fine": int(np.sum(~hier.fine.boundary_vertex)),
    }
    p1 = hier.hats @ coarse_p1(hier, system.load)
    if log:
        log(f"n={n}: dim_al={dims.total}, {len(sol.dropped)} dropped ({t_basis + t_solve:.0f} s)")
    return {"row": row, "detail": detail, "fine": hier.fine, "al": sol.values, "p1": p1}


def score_level(config: RunConfig, solved: dict, ref: Reference, log=None) -> dict:
    """Energy errors of a solved level against the reference; returns ``{"row", "detail"}``."""
    fine = solved["fine"]
    d = solved["detail"]
    gap = int(round(math.log2(ref.resolution / (d["n"] * 2 ** d["fine_depth"]))))
    row = dict(solved["row"])
    row["err_al"] = energy_error(ref, to_reference(solved["al"], fine, gap, ref, config.domain))
    row["err_p1"] = energy_error(ref, to_reference(solved["p1"], fine, gap, ref, config.domain))
    if log:
        log(f"n={solved['detail']['n']}: err_al={row['err_al']:.4e} err_p1={row['err_p1']:.4e}")
    return {"row": row, "detail": solved["detail"]}


def run_level(config: RunConfig, n: int, ref: Reference, log=None) -> dict:
    return score_level(config, solve_level(config, n, log), ref, log)


def run_convergence(config: RunConfig, log=None) -> ConvergenceReport:
    """All levels first, then the reference, so the two never share memory."""
    t0 = time.perf_counter()
    check_reference_size(config)
    solved = []
    for n in config.levels:
        try:
            solved.append(solve_level(config, n, log))
        except Exception as err:
            raise RuntimeError(f"level n={n} failed: {err}") from err
    t1 = time.perf_counter()
    ref = reference_solution(config)
    t_ref = time.perf_counter() - t1
    scored = [score_level(config, s, ref, log) for s in solved]
    rows = [s["row"] for s in scored]
    details = [s["detail"] for s in scored]
    for a, b in zip(rows, rows[1:]):
        b["rate_al"] = math.log(a["err_al"] / b["err_al"]) / math.log(a["H"] / b["H"])
    if rows:
        rows[0]["rate_al"] = None
    violations = [
        i for i in range(1, len(rows)) if rows[i]["err_al"] > rows[i - 1]["err_al"]
    ]
    meta = {
        "config_hash": config.problem_hash(),
        "config": config.to_dict(),
        "reference_dofs": int(np.sum(~ref.mesh.boundary_vertex)),
        "reference_depth": ref.mesh.level,
        "levels": details,
        "monotone": not violations,
        "monotone_violations": violations,
        "seconds_reference": t_ref,
        "seconds_total": time.perf_counter() - t0,
    }
    return ConvergenceReport(rows, meta)


# -- output ------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_csv(report: ConvergenceReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in report.rows:
        w.writerow([_fmt(row.get(c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def emit(report: ConvergenceReport, csv_path=None, json_path=None) -> None:
    if csv_path is not None:
        Path(csv_path).write_text(report_csv(report))
    if json_path is not None:
        Path(json_path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))


def load_report(json_path) -> ConvergenceReport:
    return ConvergenceReport.from_dict(json.loads(Path(json_path).read_text()))
