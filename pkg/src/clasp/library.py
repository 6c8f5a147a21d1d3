"""Hand-authored footprints for the fifteen evaluation objects.

Every footprint is a counter-clockwise simple polygon in meters, re-centred so
the object-frame origin is the area centroid.  ``affordance`` marks the
graspable sub-region: the handle for tools, the entire footprint otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .polygons import area_centroid, clip_halfplane, ensure_ccw

CATEGORIES = ("toys", "tools", "blocks")


@dataclass(frozen=True)
class ObjectSpec:
    label: str
    category: str
    footprint: tuple
    affordance: tuple
    height: float


def _rect(x0, y0, x1, y1):
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


def _ngon(r, n=32, start=0.0):
    return [(r * math.cos(start + 2 * math.pi * k / n), r * math.sin(start + 2 * math.pi * k / n)) for k in range(n)]


def _polar(fn, n=40):
    pts = []
    for k in range(n):
        a = 2 * math.pi * k / n
        r = fn(a)
        pts.append((r * math.cos(a), r * math.sin(a)))
    return pts


def _bump(a, center, width):
    d = math.atan2(math.sin(a - center), math.cos(a - center))
    return math.exp(-(d / width) ** 2)


def _banana():
    outer, inner, span = 0.085, 0.055, math.radians(45)
    n = 12
    arc_o = [(outer * math.cos(t), outer * math.sin(t)) for t in np.linspace(-span, span, n)]
    arc_i = [(inner * math.cos(t), inner * math.sin(t)) for t in np.linspace(span, -span, n)]
    return arc_o + arc_i


def _semi_disk(r=0.03, n=16):
    return [(r * math.cos(t), r * math.sin(t)) for t in np.linspace(0.0, math.pi, n + 1)]


def _finish(label, category, footprint, height, handle_cut=None):
    fp = np.array(ensure_ccw(footprint), dtype=float)
    c = area_centroid(fp)
    fp = fp - c
    footprint = ensure_ccw([(round(x, 9), round(y, 9)) for x, y in fp])
    if handle_cut is None:
        affordance = footprint
    else:
        # handle lies on the -x side of the cut line (given in the pre-centring frame)
        affordance = ensure_ccw(clip_halfplane(footprint, (1.0, 0.0), handle_cut - c[0]))
    return ObjectSpec(label, category, footprint, affordance, height)


def _build():
    specs = [
        _finish("banana", "toys", _banana(), 0.035),
        _finish("duck", "toys", _polar(lambda a: 0.028 + 0.01 * math.cos(2 * a) + 0.012 * _bump(a, 0.0, 0.45)), 0.05),
        _finish("lego", "toys", _rect(-0.032, -0.016, 0.032, 0.016), 0.024),
        _finish("pear", "toys", _polar(lambda a: 0.024 * (1 + 0.35 * math.cos(a))), 0.05),
        _finish("teddy", "toys", _polar(
            lambda a: 0.03 + 0.012 * _bump(a, math.radians(60), 0.3) + 0.012 * _bump(a, math.radians(120), 0.3)
        ), 0.05),
        _finish("cuboid", "blocks", _rect(-0.025, -0.015, 0.025, 0.015), 0.03),
        _finish("cylinder", "blocks", _ngon(0.02), 0.05),
        _finish("semi-cylinder", "blocks", _semi_disk(), 0.025),
        _finish("ball", "blocks", _ngon(0.025), 0.05),
        # triangular prism lying on a lateral face: rectangular from above
        _finish("triangular", "blocks", _rect(-0.0275, -0.016, 0.0275, 0.016), 0.028),
        _finish("hammer", "tools",
                [(-0.07, -0.01), (0.025, -0.01), (0.025, -0.035), (0.05, -0.035),
                 (0.05, 0.035), (0.025, 0.035), (0.025, 0.01), (-0.07, 0.01)], 0.03, handle_cut=0.0),
        _finish("scissors", "tools",
                [(-0.045, -0.022), (0.0, -0.022), (0.0, -0.009), (0.075, 0.0), (0.0, 0.009),
                 (0.0, 0.022), (-0.045, 0.022), (-0.045, 0.006), (-0.035, 0.0), (-0.045, -0.006)],
                0.015, handle_cut=-0.004),
        _finish("screwdriver", "tools",
                [(-0.06, -0.012), (0.0, -0.012), (0.0, -0.003), (0.06, -0.003),
                 (0.06, 0.003), (0.0, 0.003), (0.0, 0.012), (-0.06, 0.012)], 0.025, handle_cut=-0.004),
        _finish("spatula", "tools",
                [(-0.085, -0.007), (0.0, -0.007), (0.0, -0.025), (0.055, -0.025),
                 (0.055, 0.025), (0.0, 0.025), (0.0, 0.007), (-0.085, 0.007)], 0.02, handle_cut=-0.012),
        _finish("pliers", "tools",
                [(0.045, -0.004), (0.045, 0.004), (0.0, 0.009), (-0.08, 0.026), (-0.08, 0.014),
                 (-0.005, 0.0), (-0.08, -0.014), (-0.08, -0.026), (0.0, -0.009)], 0.02, handle_cut=0.0),
    ]
    return {s.label: s for s in specs}


LIBRARY = _build()
LABELS = tuple(LIBRARY)


def labels_in(category):
    return tuple(k for k, s in LIBRARY.items() if s.category == category)
