import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clasp.executor import (BUDGET, MISS, PHASES, SLIP, WIDTH, ExecConfig, SleepLog, StepBudget, arm_sleep,
                            execute_grasp, pinch, placement_ok)
from clasp.scene import (ObjectInstance, Pose2, SceneGenConfig, TabletopScene, min_clearance, sample_scene,
                         try_place)

CONE = math.atan(0.5)


def rect_obj(w, h, x=0.3, y=0.25, theta=0.0, label="cuboid", category="blocks"):
    fp = ((-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2))
    return ObjectInstance(1, category, label, fp, Pose2(x, y, theta), fp, 0.04)


def disk_obj(r, x=0.3, y=0.25, n=64):
    fp = tuple((r * math.cos(2 * math.pi * k / n), r * math.sin(2 * math.pi * k / n)) for k in range(n))
    return ObjectInstance(1, "blocks", "ball", fp, Pose2(x, y), fp, 0.04)


def scene_with(*objs):
    s = TabletopScene()
    for o in objs:
        s = try_place(s, o)
    return s


def blocks_zone(scene):
    return scene.zone_for("blocks")


def test_centroid_grasp_on_cuboid():
    s = scene_with(rect_obj(0.08, 0.03))
    r = execute_grasp(s, (0.3, 0.25, 0.04), math.pi / 2, blocks_zone(s))
    assert r.grasped and r.placed and r.failure_kind is None
    # analytic contact model: the jaws close across the 3 cm side
    assert r.width == pytest.approx(0.03)
    assert placement_ok(r.scene_after, blocks_zone(s), "cuboid")
    assert [c.phase for c in r.commands] == list(PHASES)
    assert r.steps_used <= StepBudget().grasp_type + StepBudget().puton_type


def test_free_space_miss_and_too_wide():
    s = scene_with(rect_obj(0.12, 0.10))
    assert execute_grasp(s, (0.1, 0.1, 0.0), 0.0, blocks_zone(s)).failure_kind == MISS
    r = execute_grasp(s, (0.3, 0.25, 0.04), 0.0, blocks_zone(s))
    assert r.failure_kind == WIDTH and not r.grasped


def test_center_beside_object_is_a_miss():
    s = scene_with(rect_obj(0.01, 0.03))
    # segment spans the whole block but the center sits 3 cm to its left
    assert pinch(s, 0.27, 0.25, 0.0).failure_kind == MISS


def test_two_objects_under_the_jaw_is_a_miss():
    s = scene_with(rect_obj(0.02, 0.02, x=0.28), rect_obj(0.02, 0.02, x=0.32))
    assert pinch(s, 0.30, 0.25, 0.0).failure_kind == MISS


@pytest.mark.parametrize("phi_deg,ok", [(0, True), (15, True), (26, True), (27, False), (40, False)])
def test_friction_cone_against_analytic_rectangle(phi_deg, ok):
    # closing axis tilted phi from the long faces' normal: inside the cone iff phi <= atan(mu)
    s = scene_with(rect_obj(0.12, 0.03))
    phi = math.radians(phi_deg)
    p = pinch(s, 0.3, 0.25, math.pi / 2 + phi)
    assert p.ok == ok
    if ok:
        assert p.width == pytest.approx(0.03 / math.cos(phi))
    else:
        assert p.failure_kind == SLIP
    assert (phi <= CONE) == ok


def test_disk_centre_succeeds_iff_diameter_fits():
    lim = TabletopScene().limits
    for r, fits in ((0.002, False), (0.02, True), (0.039, True), (0.045, False)):
        s = scene_with(disk_obj(r))
        outcomes = {pinch(s, 0.3, 0.25, math.pi * k / 64).ok for k in range(64)}
        assert outcomes == {fits}, r
        assert (lim.w_min <= 2 * r <= lim.w_max) == fits


world = st.tuples(st.integers(0, 50), st.floats(0.05, 0.55), st.floats(0.05, 0.55), st.floats(0, math.pi))


@settings(max_examples=200, deadline=None)
@given(world)
def test_jaw_symmetry(args):
    seed, X, Y, theta = args
    s = sample_scene(SceneGenConfig(count=4), seed)
    a = pinch(s, X, Y, theta)
    b = pinch(s, X, Y, theta + math.pi)
    assert (a.ok, a.failure_kind, a.object_id) == (b.ok, b.failure_kind, b.object_id)
    if a.ok:
        assert a.width == pytest.approx(b.width, abs=1e-12)


def test_failures_leave_scene_untouched_and_successes_keep_clearance():
    n_ok = 0
    for seed in range(25):
        s = sample_scene(SceneGenConfig(count=5), seed)
        for obj in s.objects:
            cx, cy = obj.centroid
            for theta in np.linspace(0, math.pi, 6, endpoint=False):
                r = execute_grasp(s, (cx, cy, obj.height), theta, s.zone_for(obj.category), seed=seed)
                assert r.steps_used <= 200
                if not r.grasped:
                    assert r.scene_after is s
                elif r.placed:
                    n_ok += 1
                    assert min_clearance(r.scene_after) >= 0
                    assert placement_ok(r.scene_after, s.zone_for(obj.category), obj.label)
    assert n_ok > 100


def test_step_budgets():
    s = scene_with(rect_obj(0.08, 0.03, y=0.1))
    r = execute_grasp(s, (0.3, 0.1, 0.04), math.pi / 2, blocks_zone(s), StepBudget(80, 40))
    assert r.failure_kind == BUDGET and r.grasped and not r.placed
    assert r.scene_after is s
    r = execute_grasp(s, (0.3, 0.1, 0.04), math.pi / 2, blocks_zone(s), StepBudget(20, 120))
    assert r.failure_kind == BUDGET and not r.grasped and r.steps_used == 20
    # 3 grasp phases, 2 carry phases and 2 steps per transported centimeter
    r = execute_grasp(s, (0.3, 0.1, 0.04), math.pi / 2, blocks_zone(s))
    dest = r.scene_after.object(1).centroid
    dist_cm = 100 * math.hypot(dest[0] - 0.3, dest[1] - 0.1)
    assert r.steps_used == 5 * 8 + math.ceil(2 * dist_cm - 1e-9)


def test_deterministic_placement():
    s = scene_with(rect_obj(0.08, 0.03))
    a = execute_grasp(s, (0.3, 0.25, 0.04), math.pi / 2, blocks_zone(s), seed=4)
    b = execute_grasp(s, (0.3, 0.25, 0.04), math.pi / 2, blocks_zone(s), seed=4)
    assert a.scene_after.digest() == b.scene_after.digest()


def test_missing_zone_grasps_without_placing():
    s = scene_with(rect_obj(0.08, 0.03))
    r = execute_grasp(s, (0.3, 0.25, 0.04), math.pi / 2, None)
    assert r.grasped and not r.placed


def test_stochastic_slip_is_seeded():
    s = scene_with(rect_obj(0.08, 0.03))
    cfg = ExecConfig(slip_prob=0.5)
    kinds = [execute_grasp(s, (0.3, 0.25, 0.04), math.pi / 2, blocks_zone(s), cfg=cfg, seed=k).failure_kind
             for k in range(40)]
    assert SLIP in kinds and None in kinds
    again = [execute_grasp(s, (0.3, 0.25, 0.04), math.pi / 2, blocks_zone(s), cfg=cfg, seed=k).failure_kind
             for k in range(40)]
    assert kinds == again


def test_placement_ok_examples():
    s = scene_with(rect_obj(0.03, 0.03, x=0.3, y=0.525))
    z = blocks_zone(s)
    assert placement_ok(s, z, "cuboid")
    assert not placement_ok(s, z, "hammer")
    out = scene_with(rect_obj(0.03, 0.03, x=0.3, y=0.449))
    assert not placement_ok(out, z, "cuboid")


def test_arm_sleep():
    s = scene_with(rect_obj(0.03, 0.03))
    log = SleepLog()
    before = s.digest()
    assert arm_sleep(s, log, 0) is s
    arm_sleep(s, log, 0)
    assert s.digest() == before and log.markers == [0]
    arm_sleep(s, log, 1)
    assert log.markers == [0, 1]
