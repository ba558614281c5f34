import numpy as np
import pytest

from alfem import albasis as ab
from alfem import galerkin as gk
from alfem.coefficient import identity, make_checkerboard
from alfem.fem import SparseSPD
from alfem.mesh import build_structured_mesh


@pytest.fixture(scope="module")
def basis4():
    m = build_structured_mesh(4)
    return ab.build_al_basis(m, make_checkerboard(4, 1.0, 100.0, m))


@pytest.fixture(scope="module")
def system4(basis4):
    return gk.assemble_al_system(basis4, f=1.0)


def fine_solution(basis, load):
    h = basis.hier
    free = np.flatnonzero(~h.fine.boundary_vertex)
    u = np.zeros(h.fine.n_vertices)
    u[free] = SparseSPD(h.K[free][:, free]).solve(load[free])
    return u


def test_blockwise_matches_dense_triple_product(basis4, system4):
    Phi = basis4.matrix().toarray()
    dense = Phi.T @ (basis4.hier.K @ Phi)
    B = system4.B.toarray()
    assert np.abs(B - dense).max() <= 1e-12 * np.abs(dense).max()
    np.testing.assert_allclose(system4.F, Phi.T @ system4.load, rtol=1e-12, atol=1e-15)


def test_three_node_toy():
    m = build_structured_mesh(2)
    basis = ab.build_al_basis(m, identity(m), nodes=[0, 4, 8])
    sys_ = gk.assemble_al_system(basis)
    Phi = basis.matrix().toarray()
    dense = Phi.T @ (basis.hier.K @ Phi)
    assert np.abs(sys_.B.toarray() - dense).max() <= 1e-12 * np.abs(dense).max()
    assert abs(sys_.B - sys_.B.T).max() == 0


def test_single_node_block_spd():
    m = build_structured_mesh(4)
    node = int(np.flatnonzero(~m.boundary_vertex)[4])
    basis = ab.build_al_basis(m, identity(m), nodes=[node])
    B = gk.assemble_al_system(basis).B.toarray()
    assert np.linalg.eigvalsh(B / np.sqrt(np.outer(np.diag(B), np.diag(B))))[0] > 1e-12


def test_disjoint_supports_structurally_zero(basis4, system4):
    coarse = basis4.hier.coarse
    off = system4.offsets
    pairs = set(gk.overlapping_pairs(basis4))
    B = system4.B.tocsr()
    for a in range(len(basis4.nodes)):
        for b in range(a, len(basis4.nodes)):
            blk = B[off[a]:off[a + 1], off[b]:off[b + 1]]
            ta = set(np.flatnonzero((coarse.triangles == basis4.nodes[a].node).any(axis=1)))
            tb = set(np.flatnonzero((coarse.triangles == basis4.nodes[b].node).any(axis=1)))
            if not ta & tb:
                assert (a, b) not in pairs
                assert blk.nnz == 0


def test_dof_map_order(basis4, system4):
    dm = system4.dof_map
    assert len(dm) == system4.dim
    cols = [dm[(nb.node, j)] for nb in basis4.nodes for j in range(nb.size)]
    assert cols == list(range(system4.dim))


def test_zero_load():
    m = build_structured_mesh(2)
    basis = ab.build_al_basis(m, identity(m))
    sol = gk.solve_al(gk.assemble_al_system(basis, f=0.0))
    assert not np.any(sol.values) and not np.any(sol.coefficients)


def test_residual_and_galerkin_orthogonality(basis4, system4):
    sol = gk.solve_al(system4)
    assert sol.residual <= 1e-10
    u = fine_solution(basis4, system4.load)
    Phi = basis4.matrix()
    K = basis4.hier.K
    g = Phi.T @ (K @ (u - sol.values))
    en = np.sqrt(np.asarray((Phi.multiply(K @ Phi)).sum(axis=0)).ravel())
    assert np.max(np.abs(g) / (en * np.sqrt(u @ K @ u))) <= 1e-8


def test_best_approximation(basis4, system4):
    sol = gk.solve_al(system4)
    u = fine_solution(basis4, system4.load)
    K = basis4.hier.K
    err = np.sqrt((u - sol.values) @ K @ (u - sol.values))
    rng = np.random.default_rng(0)
    for _ in range(10):
        c = sol.coefficients + 1e-3 * rng.standard_normal(system4.dim)
        v = gk.reconstruct(basis4, c)
        assert err <= np.sqrt((u - v) @ K @ (u - v)) * (1 + 1e-12)


def test_permutation_invariance(basis4, system4):
    sol = gk.solve_al(system4)
    perm = ab.ALBasisSet(basis4.hier, basis4.nodes[::-1])
    sol2 = gk.solve_al(gk.assemble_al_system(perm, f=1.0))
    assert np.abs(sol.values - sol2.values).max() <= 1e-9


def test_scaling_equivariance(basis4, system4):
    sol = gk.solve_al(system4)
    # a power of two scales every floating point operation exactly
    sol4 = gk.solve_al(gk.assemble_al_system(basis4, f=4.0))
    np.testing.assert_array_equal(sol4.values, 4 * sol.values)
    # otherwise rounding, amplified by cancelling coefficients of nearly dependent functions
    sol3 = gk.solve_al(gk.assemble_al_system(basis4, f=3.0))
    assert np.abs(sol3.values - 3 * sol.values).max() <= 1e-8 * np.abs(sol.values).max()


def test_dependence_reported(system4):
    sol = gk.solve_al(system4)
    if len(sol.dropped):
        with pytest.raises(gk.IndefiniteSystemError) as err:
            gk.solve_al(system4, allow_drop=False)
        a, b = err.value.nodes
        assert 0 <= a < system4.basis.hier.coarse.n_vertices and 0 <= b < system4.basis.hier.coarse.n_vertices


def test_interior_only_system_solves():
    m = build_structured_mesh(4)
    basis = ab.build_al_basis(m, identity(m), boundary_nodes=False)
    sol = gk.solve_al(gk.assemble_al_system(basis, f=1.0))
    assert sol.residual <= 1e-10


def test_dimension_report(basis4):
    rep = gk.dimension_report(basis4)
    assert rep.total == sum(nb.size for nb in basis4.nodes) == basis4.dimension
    assert rep.n_nodes == len(basis4.nodes)
    assert rep.ratio == rep.total / (rep.n_nodes * rep.ell_max ** 3)
    for nb in basis4.nodes:
        assert rep.per_node[nb.node] == nb.dims
    d = rep.to_dict()
    assert d["total"] == rep.total and set(d["per_node"]) == {str(nb.node) for nb in basis4.nodes}


def test_condition_estimate(system4):
    c = gk.condition_estimate(system4)
    assert c["lambda_max"] > 0
    assert c["lambda_max"] >= c["lambda_min"]


def test_exports(tmp_path, basis4, system4):
    import json

    sol = gk.solve_al(system4)
    gk.export_solution(sol, tmp_path / "u.json")
    d = json.loads((tmp_path / "u.json").read_text())
    assert len(d["vertices"]) == len(d["values"]) == basis4.fine.n_vertices
    np.testing.assert_array_equal(d["values"], sol.values)
    gk.export_system(system4, tmp_path / "B.txt")
    lines = (tmp_path / "B.txt").read_text().splitlines()
    n, m, nnz = map(int, lines[0][2:].split())
    assert n == m == system4.dim and nnz == len(lines) - 1
    i, j, v = lines[1].split()
    assert system4.B[int(i), int(j)] == float(v)
