"""Batched Sutherland-Hodgman clipping of triangles by axis-aligned boxes.

Used to integrate P1 hat functions against indicators of Cartesian cells
exactly: clip, fan-triangulate, and apply the centroid rule (exact for
linear integrands).
"""
from __future__ import annotations

import numpy as np

MAXV = 8  # a triangle clipped by four half-planes has at most 7 vertices


def _clip_halfplane(P: np.ndarray, n: np.ndarray, axis: int, bound: np.ndarray, keep_below: bool):
    """Clip polygons (B, MAXV, 2) with ``n`` vertices against ``x[axis] <= bound`` (or ``>=``)."""
    B = len(P)
    out = np.zeros_like(P)
    nout = np.zeros(B, dtype=int)
    rows = np.arange(B)
    sgn = 1.0 if keep_below else -1.0
    val = sgn * (P[..., axis] - bound[:, None])  # <= 0 means inside
    for k in range(MAXV):
        active = k < n
        if not np.any(active):
            break
        prev = np.where(k == 0, n - 1, k - 1)
        prev = np.clip(prev, 0, MAXV - 1)
        cur_v = P[rows, k]
        prev_v = P[rows, prev]
        cin = val[rows, k] <= 0
        pin = val[rows, prev] <= 0
        dc = val[rows, k]
        dp = val[rows, prev]
        denom = np.where(dp - dc == 0, 1.0, dp - dc)
        s = dp / denom
        inter = prev_v + s[:, None] * (cur_v - prev_v)
        inter[:, axis] = np.where(cin != pin, bound, inter[:, axis])
        emit_inter = active & (cin != pin)
        idx = rows[emit_inter]
        out[idx, nout[idx]] = inter[idx]
        nout[idx] += 1
        emit_cur = active & cin
        idx = rows[emit_cur]
        out[idx, nout[idx]] = cur_v[idx]
        nout[idx] += 1
    return out, nout


def clip_to_boxes(tri: np.ndarray, boxes: np.ndarray):
    """Clip triangles ``tri`` (B, 3, 2) to boxes ``[xmin, xmax, ymin, ymax]`` (B, 4)."""
    B = len(tri)
    P = np.zeros((B, MAXV, 2))
    P[:, :3] = tri
    n = np.full(B, 3)
    P, n = _clip_halfplane(P, n, 0, boxes[:, 0], keep_below=False)
    P, n = _clip_halfplane(P, n, 0, boxes[:, 1], keep_below=True)
    P, n = _clip_halfplane(P, n, 1, boxes[:, 2], keep_below=False)
    P, n = _clip_halfplane(P, n, 1, boxes[:, 3], keep_below=True)
    return P, n


def polygon_area(P: np.ndarray, n: np.ndarray) -> np.ndarray:
    B = len(P)
    area = np.zeros(B)
    for k in range(1, MAXV - 1):
        ok = k + 1 < n
        a = P[:, 0]
        b = P[:, k]
        c = P[:, k + 1]
        ar = 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
        area += np.where(ok, ar, 0.0)
    return area


def hat_moments(tri: np.ndarray, P: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Integrals of the three barycentric coordinates of ``tri`` over the clipped polygons.

    Returns (B, 3).
    """
    a0 = tri[:, 0]
    d1 = tri[:, 1] - a0
    d2 = tri[:, 2] - a0
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    out = np.zeros((len(tri), 3))
    for k in range(1, MAXV - 1):
        ok = k + 1 < n
        if not np.any(ok):
            break
        a, b, c = P[:, 0], P[:, k], P[:, k + 1]
        ar = 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
        ar = np.where(ok, ar, 0.0)
        g = (a + b + c) / 3.0
        r = g - a0
        l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
        l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
        l0 = 1.0 - l1 - l2
        out += ar[:, None] * np.column_stack([l0, l1, l2])
    return out
