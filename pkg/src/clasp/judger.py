"""Post-execution state classification and corrective feedback."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import TargetMissingInPre, TargetNotVisible
from .geometry import Point2, base_to_pixel
from .reasoner import FeedbackEntry

SUCCESS, ADJUST, REMOVED = "Success", "AdjustmentNeeded", "ObjectRemoved"
JUDGE_STATES = (SUCCESS, ADJUST, REMOVED)


@dataclass(frozen=True)
class JudgeConfig:
    alpha: float = 0.5
    eps_move: float = 3.0  # px

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


@dataclass(frozen=True)
class Diagnostic:
    state: str
    text: str
    shift: Point2
    attempt: int

    def __post_init__(self):
        if self.state not in JUDGE_STATES:
            raise ValueError(f"unknown judge state {self.state!r}")
        if self.state == SUCCESS and (self.shift.x, self.shift.y) != (0.0, 0.0):
            raise ValueError("a successful attempt carries no shift")
        if not self.text:
            raise ValueError("diagnostic text must be non-empty")

    def entry(self, point) -> FeedbackEntry:
        return FeedbackEntry(self.attempt, self.text, self.shift, self.state, Point2(*point))


def _centroid(obs, label):
    m = obs.mask_of(label)
    if m is None or not m.any():
        return None
    vs, us = np.nonzero(m)
    return float(us.mean()), float(vs.mean())


def _zone_pixel_rect(zone, cam, z=0.0):
    """Pixel-space polygon of the zone rectangle projected at height z."""
    return np.array([base_to_pixel((x, y, z), cam)[:2] for x, y in zone.polygon])


def _pixel_in_zone(point, zone, cam, z):
    from .polygons import points_in_polygon

    return bool(points_in_polygon(np.array([point]), _zone_pixel_rect(zone, cam, z))[0])


def evaluate(pre, post, target_label, zone, cam, height=0.0, cfg: JudgeConfig = JudgeConfig()) -> str:
    """Classify the attempt from the before/after observations.

    A present target whose centroid back-projects into the zone is a Success;
    a present target that did not move (or moved but missed the zone) needs
    adjustment; a vanished target was removed.  ``height`` is the plane at
    which the object's top face is seen (the zone test uses that plane).
    """
    c_pre = _centroid(pre, target_label)
    if c_pre is None:
        raise TargetMissingInPre(f"{target_label!r} not visible before execution")
    c_post = _centroid(post, target_label)
    if c_post is None:
        return REMOVED
    if zone is not None and _pixel_in_zone(c_post, zone, cam, height):
        return SUCCESS
    return ADJUST


def grasp_success(pre, post, target_label, cfg: JudgeConfig = JudgeConfig()) -> bool:
    c_pre = _centroid(pre, target_label)
    if c_pre is None:
        raise TargetMissingInPre(f"{target_label!r} not visible before execution")
    c_post = _centroid(post, target_label)
    if c_post is None:
        return True
    return math.hypot(c_post[0] - c_pre[0], c_post[1] - c_pre[1]) >= cfg.eps_move


def _fmt(x):
    # keep "-0.0" out of the report text
    return f"{x + 0.0:.1f}"


def judger_feedback(pre, post, failed_action, target_label, attempt, cfg: JudgeConfig = JudgeConfig()) -> Diagnostic:
    """Shift of alpha * (centroid - failed grasp point) with a templated rationale.

    A target missing from ``post`` yields an ObjectRemoved diagnostic with no
    shift (there is no centroid to move toward).
    """
    u, v = float(failed_action.u), float(failed_action.v)
    c = _centroid(post, target_label)
    if c is None:
        return Diagnostic(REMOVED, f"attempt {attempt}: target {target_label} no longer visible; no shift",
                          Point2(0.0, 0.0), attempt)
    du, dv = cfg.alpha * (c[0] - u), cfg.alpha * (c[1] - v)
    state = ADJUST
    text = (f"attempt {attempt}: grasp at ({_fmt(u)},{_fmt(v)}) missed/slipped; "
            f"shift ({_fmt(du)},{_fmt(dv)}) toward centroid ({_fmt(c[0])},{_fmt(c[1])})")
    return Diagnostic(state, text, Point2(du, dv), attempt)


def feedback_or_raise(pre, post, failed_action, target_label, attempt, cfg=JudgeConfig()):
    """Like judger_feedback but raises TargetNotVisible instead of returning a removal."""
    d = judger_feedback(pre, post, failed_action, target_label, attempt, cfg)
    if d.state == REMOVED:
        raise TargetNotVisible(d.text)
    return d
