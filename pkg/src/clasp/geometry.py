"""Grasp parameterization, energy scoring, rotations and the pinhole camera.

Image coordinates follow the usual raster convention: ``u`` is the column,
``v`` the row, ``v`` grows downwards.  Angles in the image plane are measured
from +u counter-clockwise as seen on screen, i.e. the direction
``(cos t, -sin t)`` in (u, v).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage

from .errors import BehindCamera, InvalidDepth, NoContact, NoFeasibleGrasp, OutOfImage

MAX_TILT = math.radians(10.0)

# camera x -> world +x, camera y -> world -y, optical axis -> world -z
STRAIGHT_DOWN = ((1.0, 0.0, 0.0), (0.0, -1.0, 0.0), (0.0, 0.0, -1.0))

LINE_STEP = 0.25  # px, sampling step when casting lines through masks


def _finite(*values):
    return all(math.isfinite(float(x)) for x in values)


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not _finite(self.x, self.y):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))

    def __iter__(self):
        yield self.x
        yield self.y

    def as_array(self):
        return np.array([self.x, self.y])


def line_angle(du, dv):
    """Orientation-free angle in [0, pi) of the image direction (du, dv)."""
    a = math.atan2(-dv, du) % math.pi
    # atan2 can land exactly on pi after the modulo for tiny negative values
    return 0.0 if a >= math.pi else a


def direction(theta):
    """Unit image-plane vector (du, dv) for an angle in the screen-CCW convention."""
    return np.array([math.cos(theta), -math.sin(theta)])


@dataclass(frozen=True)
class Grasp:
    p1: Point2
    p2: Point2

    @classmethod
    def from_points(cls, p1, p2):
        return cls(Point2(*p1), Point2(*p2))

    def width(self):
        return grasp_width(self)

    def center(self):
        return Point2((self.p1.x + self.p2.x) / 2.0, (self.p1.y + self.p2.y) / 2.0)

    def angle(self):
        return line_angle(self.p2.x - self.p1.x, self.p2.y - self.p1.y)


@dataclass(frozen=True)
class GripperLimits:
    w_min: float
    w_max: float

    def __post_init__(self):
        if not (_finite(self.w_min, self.w_max) and 0.0 <= self.w_min < self.w_max):
            raise ValueError(f"invalid gripper limits ({self.w_min}, {self.w_max})")

    def scaled(self, factor):
        return GripperLimits(self.w_min * factor, self.w_max * factor)


@dataclass(frozen=True)
class EnergyWeights:
    lambda_g: float = 1.0
    lambda_s: float = 0.5

    def __post_init__(self):
        if self.lambda_g < 0 or self.lambda_s < 0 or self.lambda_g + self.lambda_s <= 0:
            raise ValueError("energy weights must be non-negative with a positive sum")


def grasp_width(g: Grasp) -> float:
    return math.hypot(g.p1.x - g.p2.x, g.p1.y - g.p2.y)


def check_feasible(g: Grasp, limits: GripperLimits) -> bool:
    return limits.w_min <= grasp_width(g) <= limits.w_max


# --------------------------------------------------------------------------
# rotations


def skew(w):
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def so3_exp(omega) -> np.ndarray:
    """Rodrigues formula for exp([omega]x)."""
    w = np.asarray(omega, dtype=float)
    if w.shape != (3,) or not np.all(np.isfinite(w)):
        raise ValueError("omega must be a finite 3-vector")
    theta = float(np.linalg.norm(w))
    K = skew(w)
    if theta < 1e-8:
        # second-order Taylor expansion; error O(theta^3)
        return np.eye(3) + K + 0.5 * K @ K
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


# --------------------------------------------------------------------------
# camera


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    image_w: int
    image_h: int
    base_translation: tuple = (0.3, 0.3, 0.75)
    base_rotation: tuple = STRAIGHT_DOWN
    tilt: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.image_w <= 0 or self.image_h <= 0:
            raise ValueError("image size must be positive")
        object.__setattr__(self, "base_translation", tuple(float(x) for x in self.base_translation))
        object.__setattr__(self, "base_rotation", tuple(tuple(float(x) for x in r) for r in self.base_rotation))
        object.__setattr__(self, "tilt", tuple(float(x) for x in self.tilt))
        if not _finite(self.fx, self.fy, self.cx, self.cy, *self.base_translation, *self.tilt):
            raise ValueError("camera parameters must be finite")
        if math.sqrt(sum(t * t for t in self.tilt)) > MAX_TILT + 1e-12:
            raise ValueError("camera tilt exceeds 10 degrees")

    @classmethod
    def default(cls, resolution=128, height=0.75, center=(0.3, 0.3), tilt=(0.0, 0.0, 0.0)):
        f = 140.0 * resolution / 128.0
        c = (resolution - 1) / 2.0
        return cls(f, f, c, c, resolution, resolution, (center[0], center[1], height), STRAIGHT_DOWN, tilt)

    @property
    def height(self):
        return self.base_translation[2]

    @cached_property
    def rotation(self):
        return np.array(self.base_rotation) @ so3_exp(self.tilt)

    @cached_property
    def origin(self):
        return np.array(self.base_translation)

    def scaled(self, resolution):
        """Same viewpoint rendered at another square resolution."""
        s = resolution / self.image_w
        return CameraModel(
            self.fx * s, self.fy * s, (self.cx + 0.5) * s - 0.5, (self.cy + 0.5) * s - 0.5,
            resolution, int(round(self.image_h * s)), self.base_translation, self.base_rotation, self.tilt,
        )

    def in_image(self, u, v):
        return 0.0 <= u <= self.image_w - 1 and 0.0 <= v <= self.image_h - 1

    def pixels_per_meter(self, depth):
        return 0.5 * (self.fx + self.fy) / depth

    def to_dict(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.image_w, "height": self.image_h,
            "translation": list(self.base_translation),
            "base_rotation": [list(r) for r in self.base_rotation],
            "omega": list(self.tilt),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["fx"], d["fy"], d["cx"], d["cy"], int(d["width"]), int(d["height"]),
            tuple(d.get("translation", (0.3, 0.3, 0.75))),
            tuple(tuple(r) for r in d.get("base_rotation", STRAIGHT_DOWN)),
            tuple(d.get("omega", (0.0, 0.0, 0.0))),
        )


def pixel_to_base(u, v, depth, cam: CameraModel):
    """Back-project pixel (u, v) at camera-frame depth into the world frame."""
    if not (math.isfinite(depth) and depth > 0):
        raise InvalidDepth(f"depth must be positive, got {depth}")
    if not (math.isfinite(u) and math.isfinite(v)) or not cam.in_image(u, v):
        raise OutOfImage(f"pixel ({u}, {v}) outside {cam.image_w}x{cam.image_h}")
    p_cam = np.array([(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth])
    X, Y, Z = cam.rotation @ p_cam + cam.origin
    return float(X), float(Y), float(Z)


def base_to_pixel(point, cam: CameraModel):
    """Pinhole projection of a world point; returns (u, v, camera-frame depth)."""
    p = np.asarray(point, dtype=float)
    p_cam = cam.rotation.T @ (p - cam.origin)
    if p_cam[2] <= 0:
        raise BehindCamera(f"point {tuple(p)} is behind the camera")
    u = cam.fx * p_cam[0] / p_cam[2] + cam.cx
    v = cam.fy * p_cam[1] / p_cam[2] + cam.cy
    return float(u), float(v), float(p_cam[2])


def project_points(points, cam: CameraModel):
    """Vectorised base_to_pixel for an (N, 3) array; no behind-camera check."""
    p_cam = (np.asarray(points, dtype=float) - cam.origin) @ cam.rotation
    z = p_cam[:, 2]
    return np.stack([cam.fx * p_cam[:, 0] / z + cam.cx, cam.fy * p_cam[:, 1] / z + cam.cy, z], axis=1)


def pixel_rays(cam: CameraModel, us, vs):
    """World-frame ray directions whose camera-frame z component is 1."""
    d_cam = np.stack([(us - cam.cx) / cam.fx, (vs - cam.cy) / cam.fy, np.ones_like(us, dtype=float)], axis=-1)
    return d_cam @ cam.rotation.T


# --------------------------------------------------------------------------
# mask geometry and energies


class MaskGeometry:
    """Per-mask quantities shared by every grasp scored against the same mask."""

    def __init__(self, mask):
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 2 or not mask.any():
            raise ValueError("mask must be a non-empty 2-D boolean array")
        self.mask = mask
        vs, us = np.nonzero(mask)
        self.area = int(us.size)
        self.centroid = np.array([us.mean(), vs.mean()])
        self.radius = math.sqrt(self.area / math.pi)
        self.bbox = (int(us.min()), int(vs.min()), int(us.max()), int(vs.max()))
        smooth = ndimage.uniform_filter(mask.astype(float), size=3, mode="constant")
        self.grad_v, self.grad_u = np.gradient(smooth)

    def inside(self, pts):
        """Nearest-pixel membership for an (..., 2) array of (u, v) points."""
        iu = np.floor(pts[..., 0] + 0.5).astype(int)
        iv = np.floor(pts[..., 1] + 0.5).astype(int)
        h, w = self.mask.shape
        ok = (iu >= 0) & (iu < w) & (iv >= 0) & (iv < h)
        out = np.zeros(pts.shape[:-1], dtype=bool)
        out[ok] = self.mask[iv[ok], iu[ok]]
        return out

    def outward_normal(self, u, v):
        gu = _bilinear(self.grad_u, u, v)
        gv = _bilinear(self.grad_v, u, v)
        n = math.hypot(gu, gv)
        if n < 1e-12:
            return None
        return np.array([-gu / n, -gv / n])

    def reach(self, q):
        """Half-length that covers the mask bbox from point q, plus margin."""
        x0, y0, x1, y1 = self.bbox
        corners = np.array([[x0, y0], [x1, y0], [x0, y1], [x1, y1]], dtype=float)
        return float(np.max(np.hypot(*(corners - q).T))) + 2.0


def _bilinear(img, u, v):
    h, w = img.shape
    u = min(max(u, 0.0), w - 1.0)
    v = min(max(v, 0.0), h - 1.0)
    u0, v0 = int(math.floor(u)), int(math.floor(v))
    u1, v1 = min(u0 + 1, w - 1), min(v0 + 1, h - 1)
    a, b = u - u0, v - v0
    return float(
        (1 - a) * (1 - b) * img[v0, u0] + a * (1 - b) * img[v0, u1]
        + (1 - a) * b * img[v1, u0] + a * b * img[v1, u1]
    )


def cast_lines(mg: MaskGeometry, points, dirs):
    """Outermost mask crossings of lines through ``points`` along ``dirs``.

    Returns (t_entry, t_exit, hit) arrays; t values are signed distances from
    each point along its direction.  A line that never enters the mask has
    hit=False.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    reach = max(mg.reach(q) for q in points)
    ts = np.arange(-reach, reach + LINE_STEP, LINE_STEP)
    pts = points[:, None, :] + ts[None, :, None] * dirs[:, None, :]
    ins = mg.inside(pts)
    hit = ins.any(axis=1)
    first = np.argmax(ins, axis=1)
    last = ins.shape[1] - 1 - np.argmax(ins[:, ::-1], axis=1)
    return ts[first] - LINE_STEP / 2, ts[last] + LINE_STEP / 2, hit


def grasp_along(mg: MaskGeometry, u, v, theta):
    """Grasp whose contacts are the outermost crossings of the line (u, v, theta)."""
    d = direction(theta)
    q = np.array([u, v], dtype=float)
    t0, t1, hit = cast_lines(mg, q, d)
    if not hit[0]:
        raise NoContact(f"line through ({u:.2f}, {v:.2f}) misses the mask")
    return Grasp.from_points(q + t0[0] * d, q + t1[0] * d)


def grasp_candidates(mask, n_angles=16, n_offsets=8, spread=0.6, seed=0):
    """Antipodal candidates from lines through (and beside) the mask centroid.

    Each of ``n_angles`` directions gets ``n_offsets - 1`` evenly spaced
    perpendicular offsets in [-spread*r, spread*r] (which include the centroid
    line when odd) plus one seeded jittered offset.
    """
    mg = mask if isinstance(mask, MaskGeometry) else MaskGeometry(mask)
    rng = np.random.default_rng(seed)
    r = mg.radius
    base = np.linspace(-spread * r, spread * r, max(n_offsets - 1, 1))
    pts, dirs = [], []
    for i in range(n_angles):
        theta = i * math.pi / n_angles
        d = direction(theta)
        n = np.array([-d[1], d[0]])
        offsets = np.append(base, rng.uniform(-spread * r, spread * r)) if n_offsets > 1 else base
        for o in offsets:
            pts.append(mg.centroid + o * n)
            dirs.append(d)
    pts, dirs = np.array(pts), np.array(dirs)
    t0, t1, hit = cast_lines(mg, pts, dirs)
    out = []
    for k in np.nonzero(hit)[0]:
        out.append(Grasp.from_points(pts[k] + t0[k] * dirs[k], pts[k] + t1[k] * dirs[k]))
    return out


def _contacts(g: Grasp, mg: MaskGeometry):
    p1, p2 = g.p1.as_array(), g.p2.as_array()
    length = float(np.linalg.norm(p2 - p1))
    if length < 1e-9:
        raise NoContact("degenerate grasp")
    e = (p2 - p1) / length
    ts = np.arange(-2.0, length + 2.0 + LINE_STEP, LINE_STEP)
    ins = mg.inside(p1[None, :] + ts[:, None] * e[None, :])
    if not ins.any():
        raise NoContact("grasp line misses the mask")
    flips = np.nonzero(ins[1:] != ins[:-1])[0]
    if flips.size == 0:
        raise NoContact("grasp line never crosses the mask boundary")
    tb = ts[flips] + LINE_STEP / 2
    c1 = tb[np.argmin(np.abs(tb))]
    c2 = tb[np.argmin(np.abs(tb - length))]
    if c1 == c2:
        raise NoContact("grasp line crosses the boundary only once")
    return p1 + c1 * e, p1 + c2 * e, e


def _geo_energy(g, mg, alpha_ant, alpha_ctr):
    c1, c2, e = _contacts(g, mg)
    align = 0.0
    for c in (c1, c2):
        n = mg.outward_normal(c[0], c[1])
        if n is not None:
            align += abs(float(n @ e))
    align /= 2.0
    center = (g.p1.as_array() + g.p2.as_array()) / 2.0
    offset = min(float(np.linalg.norm(center - mg.centroid)) / mg.radius, 1.0)
    return alpha_ant * (1.0 - align) + alpha_ctr * offset


def geo_energy(g: Grasp, mask, depth=None, *, alpha_ant=0.7, alpha_ctr=0.3) -> float:
    """Antipodal misalignment plus normalised center offset; lower is better.

    ``depth`` must match the mask shape when given; the contact model itself
    only uses the mask outline.
    """
    mg = mask if isinstance(mask, MaskGeometry) else MaskGeometry(mask)
    if depth is not None and np.shape(depth) != mg.mask.shape:
        raise ValueError("depth and mask shapes differ")
    return _geo_energy(g, mg, alpha_ant, alpha_ctr)


@dataclass
class _RegionGeometry:
    region: np.ndarray
    pixels: np.ndarray = field(init=False)
    clamp: float = field(init=False)

    def __post_init__(self):
        vs, us = np.nonzero(self.region)
        self.pixels = np.stack([us, vs], axis=1).astype(float)
        self.clamp = max(1.0, math.sqrt(us.size / math.pi)) if us.size else 1.0


def _sem_energy(center, rg: _RegionGeometry, clamp):
    if rg.pixels.size == 0:
        return 0.0
    h, w = rg.region.shape
    iu, iv = int(math.floor(center[0] + 0.5)), int(math.floor(center[1] + 0.5))
    if 0 <= iu < w and 0 <= iv < h and rg.region[iv, iu]:
        return 0.0
    d = float(np.min(np.hypot(rg.pixels[:, 0] - center[0], rg.pixels[:, 1] - center[1])))
    return min(d / clamp, 1.0)


def sem_energy(g: Grasp, affordance, clamp_distance=None) -> float:
    """Distance from the grasp center to the affordance region, clamped to 1.

    An empty region expresses no preference.  The distance is normalised by
    ``clamp_distance`` (default: the region's equivalent radius).
    """
    rg = _RegionGeometry(np.asarray(affordance, dtype=bool))
    c = g.center()
    return _sem_energy((c.x, c.y), rg, clamp_distance or rg.clamp)


def score_grasps(candidates, mask, depth, affordance, weights: EnergyWeights, limits: GripperLimits,
                 *, alpha_ant=0.7, alpha_ctr=0.3, clamp_distance=None):
    """Total energy per candidate; infeasible or contact-less candidates get +inf."""
    mg = mask if isinstance(mask, MaskGeometry) else MaskGeometry(mask)
    if depth is not None and np.shape(depth) != mg.mask.shape:
        raise ValueError("depth and mask shapes differ")
    region = np.zeros_like(mg.mask) if affordance is None else np.asarray(affordance, dtype=bool)
    rg = _RegionGeometry(region)
    clamp = clamp_distance or mg.radius
    energies = np.full(len(candidates), np.inf)
    for i, g in enumerate(candidates):
        if not check_feasible(g, limits):
            continue
        try:
            e_geo = _geo_energy(g, mg, alpha_ant, alpha_ctr)
        except NoContact:
            continue
        c = g.center()
        e_sem = _sem_energy((c.x, c.y), rg, clamp) if weights.lambda_s else 0.0
        energies[i] = weights.lambda_g * e_geo + weights.lambda_s * e_sem
    return energies


def argmin_energy(energies):
    """Lowest index among energies within 1e-12 (relative) of the minimum."""
    finite = np.isfinite(energies)
    if not finite.any():
        raise NoFeasibleGrasp("no feasible grasp candidate")
    best = float(np.min(energies[finite]))
    tol = 1e-12 * (1.0 + abs(best))
    return int(np.nonzero(finite & (energies <= best + tol))[0][0])


def optimal_grasp(candidates, mask, depth, affordance, weights: EnergyWeights, limits: GripperLimits,
                  **kw) -> Grasp:
    if not candidates:
        raise NoFeasibleGrasp("empty candidate list")
    energies = score_grasps(candidates, mask, depth, affordance, weights, limits, **kw)
    return candidates[argmin_energy(energies)]
