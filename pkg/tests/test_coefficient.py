import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alfem.coefficient import (
    LCG_INCREMENT,
    LCG_MULTIPLIER,
    coefficient_from_dict,
    coefficient_to_dict,
    ellipticity_bounds,
    from_matrices,
    identity,
    lcg_uniform,
    make_checkerboard,
    make_random_lognormal_like,
    scalar_field,
)
from alfem.mesh import build_structured_mesh, refine_red


def test_identity_bounds():
    assert ellipticity_bounds(identity(build_structured_mesh(2))) == (1.0, 1.0)


def test_checkerboard_bounds():
    c = make_checkerboard(2, 1.0, 100.0, build_structured_mesh(4))
    assert ellipticity_bounds(c) == (1.0, 100.0)
    assert c.contrast == 100.0


def test_anisotropic_bounds():
    c = from_matrices(build_structured_mesh(2), [[2.0, 0.0], [0.0, 5.0]])
    assert ellipticity_bounds(c) == (2.0, 5.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(-0.5, 0.5))
def test_bounds_match_numpy_eigenvalues(a, b, s):
    off = s * np.sqrt(a * b)  # keeps the matrix positive definite
    m = build_structured_mesh(1)
    c = from_matrices(m, [[a, off], [off, b]])
    w = np.linalg.eigvalsh([[a, off], [off, b]])
    assert c.alpha == pytest.approx(w[0], rel=1e-12, abs=1e-14)
    assert c.beta == pytest.approx(w[1], rel=1e-12)


def test_rejects_asymmetric():
    with pytest.raises(ValueError, match="asymmetric"):
        from_matrices(build_structured_mesh(1), [[1.0, 0.1], [0.0, 1.0]])


def test_rejects_indefinite():
    with pytest.raises(ValueError, match="elliptic"):
        from_matrices(build_structured_mesh(1), [[1.0, 2.0], [2.0, 1.0]])


def test_checkerboard_single_cell_is_low():
    c = make_checkerboard(1, 3.0, 7.0, build_structured_mesh(2))
    assert np.all(c.values[:, 0] == 3.0)


def test_checkerboard_half_high_on_n4():
    c = make_checkerboard(2, 1.0, 100.0, build_structured_mesh(4))
    # brute-force parity of the centroid cell
    cen = c.resolution_mesh.centroids
    parity = (np.floor(cen[:, 0] * 2) + np.floor(cen[:, 1] * 2)) % 2
    np.testing.assert_array_equal(c.values[:, 0], np.where(parity == 0, 1.0, 100.0))
    assert np.sum(c.values[:, 0] == 100.0) == c.resolution_mesh.n_triangles // 2


def test_checkerboard_rejects_straddling():
    with pytest.raises(ValueError, match="straddle"):
        make_checkerboard(8, 1.0, 100.0, build_structured_mesh(4))


def test_checkerboard_rejects_nonpositive():
    with pytest.raises(ValueError):
        make_checkerboard(2, 0.0, 1.0, build_structured_mesh(4))


def test_lcg_reference_sequence():
    # independent big-integer evaluation of the first two states
    s1 = (LCG_MULTIPLIER * 5 + LCG_INCREMENT) % 2 ** 64
    s2 = (LCG_MULTIPLIER * s1 + LCG_INCREMENT) % 2 ** 64
    np.testing.assert_array_equal(lcg_uniform(5, 2), [(s1 >> 11) / 2 ** 53, (s2 >> 11) / 2 ** 53])


def test_random_contrast_one_is_identity():
    c = make_random_lognormal_like(4, 1.0, 3, build_structured_mesh(8))
    assert np.all(c.values == [1.0, 0.0, 1.0])


def test_random_deterministic_and_in_range():
    m = build_structured_mesh(8)
    a = make_random_lognormal_like(4, 100.0, 7, m)
    b = make_random_lognormal_like(4, 100.0, 7, m)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.alpha >= 1 and a.beta <= 100
    c = make_random_lognormal_like(4, 100.0, 8, m)
    assert not np.array_equal(a.values, c.values)


def test_generated_fields_exactly_symmetric():
    m = build_structured_mesh(8)
    for c in (make_checkerboard(4, 1, 10, m), make_random_lognormal_like(4, 10, 1, m)):
        A = c.matrices()
        assert np.all(A[:, 0, 1] == A[:, 1, 0])


def test_bounds_invariant_under_refinement():
    m = build_structured_mesh(4)
    c = make_random_lognormal_like(4, 50.0, 2, m)
    fine = refine_red(m, 2)
    r = c.on_refinement(fine)
    assert ellipticity_bounds(r) == ellipticity_bounds(c)
    np.testing.assert_array_equal(r.values, c.values[fine.parent])
    assert c.on_refinement(fine) is r


def test_on_refinement_rejects_unrelated_mesh():
    c = make_checkerboard(2, 1.0, 100.0, build_structured_mesh(4))
    with pytest.raises(ValueError):
        c.on_refinement(refine_red(build_structured_mesh(2), 2))


def test_dict_round_trip():
    m = build_structured_mesh(4)
    c = make_checkerboard(2, 1.0, 5.0, m)
    again = coefficient_from_dict(coefficient_to_dict(c), m)
    np.testing.assert_array_equal(again.values, c.values)
    spec = {"kind": "random", "cells": 2, "contrast": 10, "seed": 1}
    np.testing.assert_array_equal(coefficient_from_dict(spec, m).values,
                                  make_random_lognormal_like(2, 10, 1, m).values)
    with pytest.raises(ValueError):
        coefficient_from_dict({"kind": "nope"}, m)


def test_scalar_field_scaling():
    m = build_structured_mesh(2)
    c = scalar_field(m, 2.5)
    assert (c.alpha, c.beta) == (2.5, 2.5)
