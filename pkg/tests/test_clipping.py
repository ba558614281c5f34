import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alfem.clipping import clip_to_boxes, hat_moments, polygon_area


def brute_moments(tri, box, n=400):
    """Midpoint-rule oracle on a fine raster of the box."""
    xs = np.linspace(box[0], box[1], n + 1)
    ys = np.linspace(box[2], box[3], n + 1)
    cx, cy = np.meshgrid(0.5 * (xs[1:] + xs[:-1]), 0.5 * (ys[1:] + ys[:-1]))
    pts = np.column_stack([cx.ravel(), cy.ravel()])
    d1, d2 = tri[1] - tri[0], tri[2] - tri[0]
    det = d1[0] * d2[1] - d1[1] * d2[0]
    r = pts - tri[0]
    l1 = (r[:, 0] * d2[1] - r[:, 1] * d2[0]) / det
    l2 = (d1[0] * r[:, 1] - d1[1] * r[:, 0]) / det
    lam = np.column_stack([1 - l1 - l2, l1, l2])
    inside = (lam >= 0).all(axis=1)
    w = (xs[1] - xs[0]) * (ys[1] - ys[0])
    return (lam[inside] * w).sum(axis=0)


def test_box_containing_triangle():
    tri = np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]])
    P, n = clip_to_boxes(tri, np.array([[-1.0, 2.0, -1.0, 2.0]]))
    assert polygon_area(P, n)[0] == pytest.approx(0.5, rel=1e-15)
    np.testing.assert_allclose(hat_moments(tri, P, n)[0], [1 / 6] * 3, rtol=1e-14)


def test_disjoint_box():
    tri = np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]])
    P, n = clip_to_boxes(tri, np.array([[2.0, 3.0, 2.0, 3.0]]))
    assert polygon_area(P, n)[0] == 0.0


def test_half_square_cut():
    tri = np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]])
    P, n = clip_to_boxes(tri, np.array([[0.0, 0.5, 0.0, 1.0]]))
    # area of {x <= 1/2} inside the triangle = 1/2 - 1/8
    assert polygon_area(P, n)[0] == pytest.approx(0.375, rel=1e-14)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-0.5, 1.5), min_size=4, max_size=4))
def test_moments_against_raster(b):
    x0, x1 = sorted(b[:2])
    y0, y1 = sorted(b[2:])
    if x1 - x0 < 0.05 or y1 - y0 < 0.05:
        return
    tri = np.array([[0.1, 0.0], [1.0, 0.3], [0.2, 0.9]])
    box = np.array([x0, x1, y0, y1])
    P, n = clip_to_boxes(tri[None], box[None])
    m = hat_moments(tri[None], P, n)[0]
    np.testing.assert_allclose(m, brute_moments(tri, box), atol=2e-4)
