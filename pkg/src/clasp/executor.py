"""Kinematic pick-and-place against a planar scene.

The grasp succeeds when the parallel jaw, closing along a segment of length
``w_max`` centred on the commanded point, pinches exactly one footprint with
both contacts inside the friction cone.  Motion is not simulated; phases only
cost steps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import polygons as pg
from .errors import OutOfBounds, Penetration
from .scene import Pose2, TabletopScene, Zone, check_placement

PHASES = ("approach", "close", "lift", "transport", "release")
MISS, WIDTH, SLIP, BUDGET = "Miss", "WidthExceeded", "SlipAngle", "BudgetExceeded"
HOVER = 0.10  # m above the grasp point for approach / lift waypoints


@dataclass(frozen=True)
class StepBudget:
    grasp_type: int = 80
    puton_type: int = 120

    def __post_init__(self):
        if self.grasp_type <= 0 or self.puton_type <= 0:
            raise ValueError("step budgets must be positive")


@dataclass(frozen=True)
class ExecConfig:
    mu: float = 0.5
    steps_per_phase: int = 8
    steps_per_cm: float = 2.0
    slip_prob: float = 0.0
    placement_batch: int = 64
    placement_tries: int = 1000
    placement_gap: float = 0.002
    placement_margin: float = 0.01  # keep the centroid this far inside the zone edge

    @property
    def cone_cos(self):
        return math.cos(math.atan(self.mu))


@dataclass(frozen=True)
class ArmCommand:
    X: float
    Y: float
    Z: float
    theta: float
    phase: str

    def __post_init__(self):
        if self.Z < 0:
            raise ValueError("commands must stay above the table")
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")


@dataclass(frozen=True)
class ExecResult:
    grasped: bool
    placed: bool
    steps_used: int
    failure_kind: str | None
    scene_after: TabletopScene
    commands: tuple = ()
    object_id: int | None = None
    width: float | None = None
    detail: str = ""

    def __post_init__(self):
        if self.placed and not self.grasped:
            raise ValueError("placed implies grasped")


@dataclass(frozen=True)
class Pinch:
    """Outcome of the contact model alone."""
    ok: bool
    failure_kind: str | None
    object_id: int | None = None
    width: float = 0.0
    contacts: tuple = ()
    detail: str = ""


def _line_crossings(poly, c, d):
    """(t, outward normal) where the line c + t d crosses polygon edges."""
    a = poly
    b = np.roll(poly, -1, axis=0)
    e = b - a
    denom = d[0] * e[:, 1] - d[1] * e[:, 0]
    out = []
    for k in np.nonzero(np.abs(denom) > 1e-15)[0]:
        w = a[k] - c
        t = (w[0] * e[k, 1] - w[1] * e[k, 0]) / denom[k]
        s = (w[0] * d[1] - w[1] * d[0]) / denom[k]
        if -1e-12 <= s <= 1 + 1e-12:
            n = np.array([e[k, 1], -e[k, 0]]) / math.hypot(e[k, 0], e[k, 1])
            out.append((float(t), n))
    return out


def _normal_at(crossings, t):
    ns = [n for tt, n in crossings if abs(tt - t) <= 1e-9]
    n = np.sum(ns, axis=0)
    norm = np.linalg.norm(n)
    return n / norm if norm > 1e-12 else ns[0]


def pinch(scene: TabletopScene, X, Y, theta, cfg: ExecConfig = ExecConfig(), rng=None) -> Pinch:
    """Evaluate the closing segment against every footprint."""
    c = np.array([X, Y], dtype=float)
    d = np.array([math.cos(theta), math.sin(theta)])
    half = scene.limits.w_max / 2.0
    ends = np.array([c - half * d, c + half * d])
    seg_lo, seg_hi = ends.min(0) - pg.EPS, ends.max(0) + pg.EPS
    touched = []
    for obj in scene.objects:
        poly = obj.world_polygon
        if np.any(poly.min(0) > seg_hi) or np.any(poly.max(0) < seg_lo):
            continue
        xs = [(t, n) for t, n in _line_crossings(poly, c, d) if -half - 1e-12 <= t <= half + 1e-12]
        inside_ends = pg.points_in_polygon(ends, poly)
        if xs or inside_ends.any():
            touched.append((obj, xs, inside_ends))
    if not touched:
        return Pinch(False, MISS, detail="closing segment touches nothing")
    if len(touched) > 1:
        ids = [o.id for o, _, _ in touched]
        return Pinch(False, MISS, detail=f"closing segment spans several objects {ids}")
    obj, xs, inside_ends = touched[0]
    if inside_ends.any():
        return Pinch(False, WIDTH, obj.id, detail="object wider than the open jaw")
    t_left = min(t for t, _ in xs)
    t_right = max(t for t, _ in xs)
    if not (t_left <= 1e-12 and t_right >= -1e-12):
        return Pinch(False, MISS, obj.id, detail="grasp center beside the object")
    width = t_right - t_left
    contacts = (tuple(c + t_left * d), tuple(c + t_right * d))
    if width < scene.limits.w_min:
        return Pinch(False, WIDTH, obj.id, width, contacts, "pinched width below w_min")
    n_left, n_right = _normal_at(xs, t_left), _normal_at(xs, t_right)
    # left jaw travels +d, right jaw -d; each must push within the cone around the inward normal
    cos_l = float(d @ -n_left)
    cos_r = float(-d @ -n_right)
    if min(cos_l, cos_r) < cfg.cone_cos - 1e-12:
        return Pinch(False, SLIP, obj.id, width, contacts, f"contact angle outside friction cone ({min(cos_l, cos_r):.3f})")
    if cfg.slip_prob > 0 and rng is not None and rng.random() < cfg.slip_prob:
        return Pinch(False, SLIP, obj.id, width, contacts, "stochastic slip")
    return Pinch(True, None, obj.id, width, contacts)


def _placement_pose(scene, obj, zone, pickup, rng, cfg):
    """Feasible zone pose nearest the pickup point; None if sampling runs out."""
    x0, y0, x1, y1 = zone.rect
    others = replace(scene, objects=tuple(o for o in scene.objects if o.id != obj.id))
    tried = 0
    while tried < cfg.placement_tries:
        n = min(cfg.placement_batch, cfg.placement_tries - tried)
        xs = rng.uniform(x0, x1, n)
        ys = rng.uniform(y0, y1, n)
        ts = rng.uniform(0.0, 2.0 * math.pi, n)
        tried += n
        ok = []
        for x, y, t in zip(xs, ys, ts):
            pose = Pose2(x, y, t)
            cand = obj.moved(pose)
            try:
                check_placement(others, cand, gap=cfg.placement_gap)
            except (Penetration, OutOfBounds):
                continue
            cx, cy = cand.centroid
            m = cfg.placement_margin
            if x0 + m <= cx <= x1 - m and y0 + m <= cy <= y1 - m:
                ok.append(pose)
        if ok:
            return min(ok, key=lambda p: math.hypot(p.x - pickup[0], p.y - pickup[1]))
    return None


def execute_grasp(scene: TabletopScene, base_point, theta, target_zone: Zone | None, budget: StepBudget = StepBudget(),
                  cfg: ExecConfig = ExecConfig(), seed=0) -> ExecResult:
    """Approach, close and lift; on a good pinch carry the object into ``target_zone``."""
    X, Y, Z = (float(v) for v in base_point)
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0xE8EC])
    Zc = max(Z, 0.0)
    cmds = [ArmCommand(X, Y, Zc + HOVER, theta, "approach"), ArmCommand(X, Y, Zc, theta, "close")]
    steps = 2 * cfg.steps_per_phase
    p = pinch(scene, X, Y, theta, cfg, rng)
    cmds.append(ArmCommand(X, Y, Zc + HOVER, theta, "lift"))
    steps += cfg.steps_per_phase
    if steps > budget.grasp_type:
        return ExecResult(False, False, budget.grasp_type, BUDGET, scene, tuple(cmds), p.object_id,
                          detail="grasp phases exceed the grasp budget")
    if not p.ok:
        return ExecResult(False, False, steps, p.failure_kind, scene, tuple(cmds), p.object_id, p.width or None,
                          p.detail)
    obj = scene.object(p.object_id)
    if target_zone is None:
        return ExecResult(True, False, steps, None, scene, tuple(cmds), obj.id, p.width, "no target zone")
    pickup = obj.centroid
    pose = _placement_pose(scene, obj, target_zone, pickup, rng, cfg)
    if pose is None:
        return ExecResult(True, False, steps, None, scene, tuple(cmds), obj.id, p.width,
                          "no free pose in the target zone")
    moved = obj.moved(pose)
    dest = moved.centroid
    dist_cm = 100.0 * math.hypot(dest[0] - pickup[0], dest[1] - pickup[1])
    carry = 2 * cfg.steps_per_phase + int(math.ceil(cfg.steps_per_cm * dist_cm - 1e-9))
    cmds.append(ArmCommand(float(dest[0]), float(dest[1]), Zc + HOVER, theta, "transport"))
    if carry > budget.puton_type:
        return ExecResult(True, False, steps + budget.puton_type, BUDGET, scene, tuple(cmds), obj.id, p.width,
                          f"transport of {dist_cm:.1f} cm exceeds the put-on budget")
    cmds.append(ArmCommand(float(dest[0]), float(dest[1]), moved.height, theta, "release"))
    after = replace(scene, objects=tuple(moved if o.id == obj.id else o for o in scene.objects))
    return ExecResult(True, True, steps + carry, None, after, tuple(cmds), obj.id, p.width)


def placement_ok(scene: TabletopScene, zone: Zone | None, label) -> bool:
    if zone is None:
        return False
    obj = scene.find(label)
    if obj is None:
        return False
    x, y = obj.centroid
    return zone.contains(float(x), float(y))


@dataclass
class SleepLog:
    """Collects end-of-episode markers (the arm's rest command)."""
    markers: list = field(default_factory=list)

    def arm_sleep(self, scene, episode=0):
        if not self.markers or self.markers[-1] != episode:
            self.markers.append(episode)
        return scene


def arm_sleep(scene, log: SleepLog | None = None, episode=0):
    """No scene change; records a single sleep marker for ``episode`` in ``log``."""
    if log is not None:
        log.arm_sleep(scene, episode)
    return scene
