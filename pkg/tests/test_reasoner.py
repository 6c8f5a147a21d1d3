import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clasp.errors import (ActionOutOfBounds, MalformedJson, MissingField, NonFinite, TargetNotVisible,
                          UnexpectedField, UnknownCategory)
from clasp.geometry import Point2, check_feasible, geo_energy, grasp_candidates, sem_energy
from clasp.library import CATEGORIES, LABELS
from clasp.perception import perceive
from clasp.reasoner import (ActionTuple, FeedbackEntry, FeedbackMemory, Instruction, OracleReasoner,
                            PerturbedReasoner, ReasonRequest, clamp_to_mask, parse_action, pixel_limits,
                            serialize_request)
from clasp.scene import SceneGenConfig, affordance_mask, render, sample_scene
from conftest import single

VOCAB = LABELS + ("toys", "tools", "blocks")


def make_request(scene, instr, memory=FeedbackMemory(), attempt=1, prior=True):
    obs = render(scene)
    p = perceive(obs, VOCAB) if prior else None
    aff = {}
    tgt = scene.find(instr.target_label) if instr.target_label else None
    if tgt is not None and prior:
        aff[tgt.label] = affordance_mask(scene, tgt, obs)
    return ReasonRequest(instr, obs, p, memory, attempt, scene.limits, scene.camera.fx, aff)


# -- parsing ----------------------------------------------------------------

def test_parse_valid_and_normalised():
    a = parse_action('{"u":64,"v":32,"theta":0.5,"category":"toys"}', (128, 128))
    assert a == ActionTuple(64, 32, 0.5, "toys")
    b = parse_action('{"u":64,"v":32,"theta":3.6415926535897931,"category":"toys"}', (128, 128))
    assert b.theta == pytest.approx(0.5)


@pytest.mark.parametrize("text,err,field", [
    ('{"u":64,"v":32,"category":"toys"}', MissingField, "theta"),
    ('{"u":NaN,"v":32,"theta":0,"category":"toys"}', NonFinite, None),
    ('{"u":1e400,"v":32,"theta":0,"category":"toys"}', NonFinite, None),
    ('{"u":128,"v":32,"theta":0,"category":"toys"}', ActionOutOfBounds, None),
    ('{"u":-0.1,"v":32,"theta":0,"category":"toys"}', ActionOutOfBounds, None),
    ('{"u":1,"v":2,"theta":0,"category":"fruit"}', UnknownCategory, None),
    ('{"u":1,"v":2,"theta":0,"category":"toys","why":"x"}', UnexpectedField, None),
    ('I would grasp the banana near its middle.', MalformedJson, None),
    ('[1, 2, 3]', MalformedJson, None),
    ('{"u":true,"v":2,"theta":0,"category":"toys"}', MalformedJson, None),
    ('{"u":"3","v":2,"theta":0,"category":"toys"}', MalformedJson, None),
])
def test_parse_errors_distinct(text, err, field):
    with pytest.raises(err) as e:
        parse_action(text, (128, 128))
    assert e.value.body == text
    if field:
        assert e.value.field == field


actions = st.builds(ActionTuple, st.floats(0, 127), st.floats(0, 127), st.floats(-10, 10), st.sampled_from(CATEGORIES))


@settings(max_examples=500)
@given(actions)
def test_serialize_parse_round_trip(a):
    assert parse_action(a.to_json(), (128, 128)) == a


def test_instruction_parsing():
    assert Instruction.parse("Pick the semi-cylinder please").target_label == "semi-cylinder"
    assert Instruction.parse("grab the cylinder").target_label == "cylinder"
    i = Instruction.parse("put any of the tools away")
    assert (i.target_label, i.target_category) == (None, "tools")
    assert Instruction.parse("pick a block").target_category == "blocks"
    assert Instruction.parse("hello").target_category is None


def test_memory_appends_and_truncates():
    m = FeedbackMemory(capacity=2)
    for k in (1, 2, 3):
        m = m.append(FeedbackEntry(k, "t", Point2(1, 0), "AdjustmentNeeded", Point2(0, 0)))
    assert [e.attempt for e in m.entries] == [2, 3]
    with pytest.raises(ValueError):
        m.append(FeedbackEntry(3, "t", Point2(0, 0), "AdjustmentNeeded", Point2(0, 0)))


# -- oracle ----------------------------------------------------------------

def test_oracle_cuboid_center_against_exhaustive_oracle():
    scene = single("cuboid", 0.3, 0.3)
    req = make_request(scene, Instruction.for_label("cuboid"))
    a = OracleReasoner()(req)
    det, mask, desc = req.perception.find("cuboid")
    limits = pixel_limits(scene.limits, scene.camera.fx, desc.mean_depth)
    aff = req.affordances["cuboid"]
    cands = grasp_candidates(mask)
    # exhaustive: evaluate every feasible candidate with the public energy terms
    best, best_e = None, math.inf
    for g in cands:
        if not check_feasible(g, limits):
            continue
        e = 1.0 * geo_energy(g, mask) + 0.5 * sem_energy(g, aff)
        if e < best_e:
            best, best_e = g, e
    c = best.center()
    assert (a.u, a.v) == pytest.approx((c.x, c.y))
    assert a.theta == pytest.approx(best.angle())
    assert math.hypot(a.u - desc.centroid.x, a.v - desc.centroid.y) <= 1.0
    assert a.category == "blocks"


def test_oracle_absent_target():
    req = make_request(single("cuboid"), Instruction.for_label("hammer"))
    with pytest.raises(TargetNotVisible):
        OracleReasoner()(req)


def test_memory_shift_applied_then_clamped():
    scene = single("cuboid", 0.3, 0.3)
    instr = Instruction.for_label("cuboid")
    first = OracleReasoner()(make_request(scene, instr))
    mem = FeedbackMemory().append(FeedbackEntry(1, "t", Point2(5, 0), "AdjustmentNeeded", Point2(first.u, first.v)))
    second = OracleReasoner()(make_request(scene, instr, mem, 2))
    assert (second.u, second.v) == (first.u + 5, first.v)
    far = FeedbackMemory().append(FeedbackEntry(1, "t", Point2(500, 0), "AdjustmentNeeded", Point2(first.u, first.v)))
    clamped = OracleReasoner()(make_request(scene, instr, far, 2))
    mask = make_request(scene, instr).perception.find("cuboid")[1]
    assert mask[int(clamped.v), int(clamped.u)]
    vs, us = np.nonzero(mask)
    assert clamped.u == us.max()


def test_category_instruction_picks_lowest_id():
    scene = sample_scene(SceneGenConfig(count=6, labels=("pear", "lego", "duck", "hammer", "ball", "teddy")), 3)
    req = make_request(scene, Instruction("pick a toy", None, "toys"))
    a = OracleReasoner()(req)
    toys = sorted(o.id for o in scene.objects if o.category == "toys")
    mask = req.observation.instance_masks == toys[0]
    assert mask[int(round(a.v)), int(round(a.u))]


def test_oracle_inside_mask_and_feasible_on_many_scenes():
    for seed in range(25):
        scene = sample_scene(SceneGenConfig(count=4), seed)
        for obj in scene.objects:
            req = make_request(scene, Instruction.for_label(obj.label))
            if req.perception.find(obj.label) is None:
                continue
            a = OracleReasoner()(req)
            mask = req.perception.find(obj.label)[1]
            assert mask[int(math.floor(a.v + 0.5)), int(math.floor(a.u + 0.5))]
            b = OracleReasoner()(req)
            assert a == b


def test_perturbed_examples():
    scene = single("ball", 0.3, 0.3)
    instr = Instruction.for_label("ball")
    req = make_request(scene, instr)
    o = OracleReasoner()(req)
    assert PerturbedReasoner(0.0, 5)(req) == o
    p = PerturbedReasoner(0.5, 5)
    a = p(req)
    desc = req.perception.find("ball")[2]
    r = math.sqrt(desc.area / math.pi)
    assert math.hypot(a.u - o.u, a.v - o.v) == pytest.approx(0.5 * r)
    assert PerturbedReasoner(0.5, 5)(req) == a
    assert PerturbedReasoner(0.5, 6)(req) != a


def test_perturbed_zero_equals_oracle_on_seeded_scenes():
    for seed in range(60):
        scene = sample_scene(SceneGenConfig(count=3), seed)
        req = make_request(scene, Instruction.for_label(scene.objects[seed % 3].label))
        if req.perception.find(req.instruction.target_label) is None:
            continue
        assert PerturbedReasoner(0.0, seed)(req) == OracleReasoner()(req)


def test_reasoner_only_ablation_uses_box():
    scene = single("cuboid", 0.3, 0.3)
    req = make_request(scene, Instruction.for_label("cuboid"), prior=False)
    a = OracleReasoner()(req)
    x0, y0, x1, y1 = req.observation.boxes[0].box
    assert (a.u, a.v) == ((x0 + x1) / 2, (y0 + y1) / 2)


def test_request_wire_format():
    scene = single("cuboid", 0.3, 0.3)
    mem = FeedbackMemory().append(FeedbackEntry(1, "t", Point2(1.5, -2), "AdjustmentNeeded", Point2(3, 4)))
    req = make_request(scene, Instruction.for_label("cuboid"), mem, 2)
    body = serialize_request(req)
    assert set(body) == {"instruction", "image_size", "detections", "descriptors", "masks", "feedback"}
    assert body["feedback"] == [{"attempt": 1, "state": "AdjustmentNeeded", "text": "t", "shift": [1.5, -2.0]}]
    json.dumps(body)
    from dataclasses import replace
    raster = serialize_request(replace(req, include_raster=True))["raster"]
    import base64
    assert base64.b64decode(raster)[:8] == b"\x89PNG\r\n\x1a\n"


def test_clamp_to_mask():
    m = np.zeros((10, 10), bool)
    m[2:4, 2:4] = True
    assert clamp_to_mask((2.2, 3.1), m) == (2.2, 3.1)
    assert clamp_to_mask((9, 9), m) == (3.0, 3.0)
