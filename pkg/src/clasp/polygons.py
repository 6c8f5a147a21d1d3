"""Planar polygon helpers: orientation, simplicity, triangulation, SAT clearance."""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

EPS = 1e-9  # meters; overlaps below this count as touching


def signed_area(poly):
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def area_centroid(poly):
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    return np.array([((x + xn) * cross).sum() / (6 * a), ((y + yn) * cross).sum() / (6 * a)])


def ensure_ccw(poly):
    p = [tuple(map(float, q)) for q in poly]
    return tuple(p if signed_area(p) > 0 else p[::-1])


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _segments_intersect(a, b, c, d):
    d1, d2 = _cross(c, d, a), _cross(c, d, b)
    d3, d4 = _cross(a, b, c), _cross(a, b, d)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and 0 not in (d1, d2, d3, d4):
        return True

    def on_seg(p, q, r):
        return min(p[0], q[0]) - 1e-15 <= r[0] <= max(p[0], q[0]) + 1e-15 and \
            min(p[1], q[1]) - 1e-15 <= r[1] <= max(p[1], q[1]) + 1e-15

    return (d1 == 0 and on_seg(c, d, a)) or (d2 == 0 and on_seg(c, d, b)) or \
        (d3 == 0 and on_seg(a, b, c)) or (d4 == 0 and on_seg(a, b, d))


def is_simple(poly):
    """No two non-adjacent edges touch; at least three distinct vertices."""
    p = [tuple(q) for q in poly]
    n = len(p)
    if n < 3 or len(set(p)) != n:
        return False
    if abs(signed_area(p)) <= 0.0:
        return False
    for i in range(n):
        a, b = p[i], p[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            if _segments_intersect(a, b, p[j], p[(j + 1) % n]):
                return False
    return True


def is_convex(poly):
    p = np.asarray(poly, dtype=float)
    e = np.roll(p, -1, axis=0) - p
    cr = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
    return bool(np.all(cr >= -1e-15))


@lru_cache(maxsize=256)
def convex_pieces(poly):
    """Index tuples of convex pieces (the polygon itself, or ear-clipped triangles)."""
    if is_convex(poly):
        return (tuple(range(len(poly))),)
    idx = list(range(len(poly)))
    tris = []
    guard = 0
    while len(idx) > 3 and guard < 10 * len(poly) ** 2:
        guard += 1
        for k in range(len(idx)):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            a, b, c = poly[i0], poly[i1], poly[i2]
            if _cross(a, b, c) <= 0:
                continue
            if any(_in_triangle(poly[j], a, b, c) for j in idx if j not in (i0, i1, i2)):
                continue
            tris.append((i0, i1, i2))
            idx.pop(k)
            break
        else:
            break
    tris.append(tuple(idx[:3]))
    return tuple(tris)


def _in_triangle(p, a, b, c):
    return _cross(a, b, p) >= 0 and _cross(b, c, p) >= 0 and _cross(c, a, p) >= 0


def transform(poly, x, y, theta):
    p = np.asarray(poly, dtype=float)
    c, s = math.cos(theta), math.sin(theta)
    return p @ np.array([[c, s], [-s, c]]) + np.array([x, y])


def points_in_polygon(pts, poly):
    """Even-odd membership of (..., 2) points; boundary points may go either way."""
    pts = np.asarray(pts, dtype=float)
    x, y = pts[..., 0], pts[..., 1]
    poly = np.asarray(poly, dtype=float)
    inside = np.zeros(x.shape, dtype=bool)
    xj, yj = poly[-1]
    for xi, yi in poly:
        cond = (yi > y) != (yj > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = (xj - xi) * (y - yi) / (yj - yi) + xi
        inside ^= cond & (x < xint)
        xj, yj = xi, yi
    return inside


def _sat_overlap(pa, pb):
    """Minimum interval overlap across all edge normals; <= 0 means separated."""
    best = math.inf
    for poly in (pa, pb):
        e = np.roll(poly, -1, axis=0) - poly
        normals = np.stack([e[:, 1], -e[:, 0]], axis=1)
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        a = pa @ normals.T
        b = pb @ normals.T
        ov = np.minimum(a.max(0) - b.min(0), b.max(0) - a.min(0))
        best = min(best, float(ov.min()))
        if best <= EPS:
            return best
    return best


def _point_segment_dist(p, a, b):
    ab = b - a
    denom = np.einsum("...i,...i->...", ab, ab)
    t = np.clip(np.einsum("...i,...i->...", p - a, ab) / np.where(denom > 0, denom, 1.0), 0.0, 1.0)
    proj = a + t[..., None] * ab
    return np.linalg.norm(p - proj, axis=-1)


def boundary_distance(pa, pb):
    """Distance between polygon boundaries (valid when interiors are disjoint)."""
    a0, a1 = pa, np.roll(pa, -1, axis=0)
    b0, b1 = pb, np.roll(pb, -1, axis=0)
    d1 = _point_segment_dist(pa[:, None, :], b0[None, :, :], b1[None, :, :]).min()
    d2 = _point_segment_dist(pb[:, None, :], a0[None, :, :], a1[None, :, :]).min()
    return float(min(d1, d2))


def penetration_depth(pa, pieces_a, pb, pieces_b):
    """Largest SAT overlap among convex piece pairs (0 when interiors are disjoint)."""
    depth = 0.0
    for ia in pieces_a:
        qa = pa[list(ia)]
        amin, amax = qa.min(0), qa.max(0)
        for ib in pieces_b:
            qb = pb[list(ib)]
            if np.any(qb.min(0) >= amax - EPS) or np.any(amin >= qb.max(0) - EPS):
                continue
            ov = _sat_overlap(qa, qb)
            if ov > EPS:
                depth = max(depth, ov)
    return depth


def bbox_gap(pa, pb):
    lo = np.maximum(pa.min(0), pb.min(0))
    hi = np.minimum(pa.max(0), pb.max(0))
    gap = np.maximum(lo - hi, 0.0)
    return float(np.hypot(*gap))


def clip_halfplane(poly, normal, offset):
    """Sutherland-Hodgman clip keeping points with normal . p <= offset."""
    out = []
    n = np.asarray(normal, dtype=float)
    pts = [np.asarray(q, dtype=float) for q in poly]
    for i, cur in enumerate(pts):
        prev = pts[i - 1]
        dc, dp = cur @ n - offset, prev @ n - offset
        if dc <= 0:
            if dp > 0:
                out.append(prev + (cur - prev) * (dp / (dp - dc)))
            out.append(cur)
        elif dp <= 0:
            out.append(prev + (cur - prev) * (dp / (dp - dc)))
    cleaned = []
    for q in out:
        t = (round(float(q[0]), 12), round(float(q[1]), 12))
        if not cleaned or cleaned[-1] != t:
            cleaned.append(t)
    if len(cleaned) > 1 and cleaned[0] == cleaned[-1]:
        cleaned.pop()
    return tuple(cleaned)


def polygon_within(inner, outer, tol=1e-9):
    """True when every inner vertex lies inside or on the outer polygon and no edges cross."""
    outer_a = np.asarray(outer, dtype=float)
    inner_a = np.asarray(inner, dtype=float)
    ins = points_in_polygon(inner_a, outer_a)
    for k, p in enumerate(inner_a):
        if not ins[k]:
            d = _point_segment_dist(p[None, :], outer_a, np.roll(outer_a, -1, axis=0)).min()
            if d > tol:
                return False
    mids = (inner_a + np.roll(inner_a, -1, axis=0)) / 2.0
    ins_m = points_in_polygon(mids, outer_a)
    for k, p in enumerate(mids):
        if not ins_m[k]:
            d = _point_segment_dist(p[None, :], outer_a, np.roll(outer_a, -1, axis=0)).min()
            if d > tol:
                return False
    return True
