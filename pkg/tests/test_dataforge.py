import json
import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import ndimage

from clasp import rle
from clasp.dataforge import (AffordanceRegion, ForgeConfig, ReasoningTemplate, annotate_affordance, decode_record,
                             fuse_depth, generate, make_record, make_templates, manifest_path, read_dataset,
                             validate_record, write_dataset)
from clasp.errors import NoOverlap
from clasp.geometry import Grasp, check_feasible
from clasp.scene import ObjectInstance, Pose2, SceneGenConfig, TabletopScene, render, sample_scene
from conftest import single


def pixel_limits(scene, obs, region):
    return scene.limits.scaled(scene.camera.fx / float(obs.depth[region].mean()))


# -- depth fusion -------------------------------------------------------------

def test_fuse_valid_sensor_is_returned_exactly():
    rng = np.random.default_rng(0)
    s = rng.uniform(0.5, 1.0, (8, 8))
    out = fuse_depth(s, s * 3.0 + 1.0)
    assert np.array_equal(out, s)


def test_fuse_fills_single_hole():
    s = np.full((4, 4), 0.7)
    s[1, 2] = 0.0
    e = np.full((4, 4), 0.7)
    e[1, 2] = 0.65
    out = fuse_depth(s, e)
    assert out[1, 2] == 0.65
    assert np.array_equal(np.delete(out.ravel(), 6), np.delete(s.ravel(), 6))


def test_fuse_median_ratio_against_oracle():
    rng = np.random.default_rng(5)
    truth = rng.uniform(0.5, 0.8, (16, 16))
    holes = rng.random((16, 16)) < 0.2
    sensor = np.where(holes, np.nan, truth)
    est = 2.0 * truth
    est[0, :4] *= 1.5  # a few outliers the median should ignore
    out = fuse_depth(sensor, est)
    co = ~holes
    ratio = np.median(truth[co] / est[co])  # median ratio, recomputed independently
    assert ratio == pytest.approx(0.5)
    assert np.allclose(out[holes], est[holes] * ratio)
    assert np.array_equal(out[~holes], truth[~holes])


def test_fuse_both_missing_and_no_overlap():
    s = np.array([[0.0, 0.5], [np.inf, 0.6]])
    e = np.array([[np.nan, 1.0], [2.0, 1.2]])
    out = fuse_depth(s, e)
    assert math.isnan(out[0, 0]) and out[1, 0] == 1.0
    with pytest.raises(NoOverlap):
        fuse_depth(np.zeros((3, 3)), np.ones((3, 3)))
    with pytest.raises(ValueError):
        fuse_depth(np.ones((2, 2)), np.ones((3, 3)))


def test_fuse_never_overwrites_valid_sensor():
    rng = np.random.default_rng(9)
    for _ in range(50):
        s = rng.uniform(0.1, 1.0, (12, 12))
        s[rng.random((12, 12)) < 0.3] = 0.0
        s[rng.random((12, 12)) < 0.05] = np.nan
        e = rng.uniform(0.1, 2.0, (12, 12))
        valid = np.isfinite(s) & (s > 0)
        if not valid.any():
            continue
        assert np.array_equal(fuse_depth(s, e)[valid], s[valid])


# -- affordances ------------------------------------------------------------

def test_hammer_region_is_the_handle_only():
    scene = single("hammer", 0.3, 0.25)
    obs = render(scene)
    regions, skipped = annotate_affordance(obs, scene)
    assert skipped == [] and len(regions) == 1
    r = regions[0]
    full = obs.instance_masks == scene.objects[0].id
    assert r.kind == "handle"
    assert r.region.sum() < full.sum()
    assert not (r.region & ~full).any()


def test_block_region_is_whole_visible_mask():
    scene = single("cuboid")
    obs = render(scene)
    (r,), _ = annotate_affordance(obs, scene)
    assert r.kind == "whole"
    assert np.array_equal(r.region, obs.instance_masks == scene.objects[0].id)


def test_fully_occluded_object_is_skipped():
    # a thin bar lying directly beneath a tall wide box cannot be seen from above
    s = TabletopScene()
    fp_big = ((-0.05, -0.05), (0.05, -0.05), (0.05, 0.05), (-0.05, 0.05))
    fp_bar = ((-0.01, -0.01), (0.01, -0.01), (0.01, 0.01), (-0.01, 0.01))
    big = ObjectInstance(1, "blocks", "cuboid", fp_big, Pose2(0.3, 0.25), fp_big, 0.3)
    bar = ObjectInstance(2, "blocks", "triangle", fp_bar, Pose2(0.3, 0.25), fp_bar, 0.01)
    s = replace(s, objects=(big, bar))
    regions, skipped = annotate_affordance(render(s), s)
    assert [r.object_label for r in regions] == ["cuboid"]
    assert skipped == [{"label": "triangle", "reason": "FullyOccluded"}]


def test_region_and_template_types_reject_bad_values():
    with pytest.raises(ValueError):
        AffordanceRegion("x", np.zeros((3, 3), bool), "whole")
    with pytest.raises(ValueError):
        AffordanceRegion("x", np.ones((3, 3), bool), "rim")
    with pytest.raises(ValueError):
        ReasoningTemplate("t", None, 1)
    with pytest.raises(ValueError):
        ReasoningTemplate("t", ((0.0, 0.0), (math.nan, 1.0)), 1)
    with pytest.raises(ValueError):
        ReasoningTemplate("t", ((0.0, 0.0), (1.0, 1.0)), -1)


# -- templates --------------------------------------------------------------

def test_positives_feasible_and_on_the_affordance():
    n = 0
    for seed in range(15):
        scene = sample_scene(SceneGenConfig(count=4, max_tilt_deg=0.0), seed)
        obs = render(scene)
        regions, _ = annotate_affordance(obs, scene)
        by_label = {r.object_label: r for r in regions}
        for t in make_templates(regions, scene, per_object=3, neg_ratio=0.0, seed=seed, obs=obs):
            assert t.y == 1
            label = t.tau.split(" ")[2]
            region = by_label[label].region
            grown = ndimage.binary_dilation(region, np.ones((3, 3), bool))
            for x, y in t.grasp:
                assert math.isfinite(x) and math.isfinite(y)
                assert grown[int(round(y)), int(round(x))]
            assert check_feasible(Grasp.from_points(*t.grasp), pixel_limits(scene, obs, region))
            n += 1
    assert n > 50


def test_template_text_format():
    scene = single("cuboid")
    obs = render(scene)
    regions, _ = annotate_affordance(obs, scene)
    (t,) = make_templates(regions, scene, per_object=1, neg_ratio=0.0, obs=obs)
    (x1, y1), (x2, y2) = t.grasp
    assert t.tau == f"grasp the cuboid by the whole at ({x1:.1f},{y1:.1f})-({x2:.1f},{y2:.1f})"


def test_negatives_are_null_and_near_the_ratio():
    pos = neg = 0
    for seed in range(20):
        scene = sample_scene(SceneGenConfig(count=3), seed)
        obs = render(scene)
        regions, _ = annotate_affordance(obs, scene)
        for t in make_templates(regions, scene, per_object=2, neg_ratio=0.25, seed=seed, obs=obs):
            if t.y == -1:
                assert t.grasp is None and t.to_dict()["grasp"] is None
                neg += 1
            else:
                pos += 1
    assert neg / (pos + neg) == pytest.approx(0.25, abs=0.03)
    scene = single("cuboid")
    regions, _ = annotate_affordance(render(scene), scene)
    assert all(t.y == -1 for t in make_templates(regions, scene, neg_ratio=1.0))


def test_templates_deterministic_per_seed():
    scene = sample_scene(SceneGenConfig(count=4), 2)
    regions, _ = annotate_affordance(render(scene), scene)
    a = make_templates(regions, scene, seed=7)
    assert a == make_templates(regions, scene, seed=7)
    assert a != make_templates(regions, scene, seed=8)
    with pytest.raises(ValueError):
        make_templates(regions, scene, per_object=0)


# -- records and files ---------------------------------------------------------

def test_records_deterministic_across_workers():
    a = generate(12, 42)
    b = generate(12, 42, workers=4)
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    assert {r["source"] for r in a} == {"synthetic", "replayed"}
    assert all(validate_record(r) == [] for r in a)


def test_replayed_depth_is_complete_where_sensor_had_holes():
    cfg = ForgeConfig(replay_frac=1.0)
    rec = make_record(3, 0, cfg)
    _, depth, _ = decode_record(rec)
    assert rec["source"] == "replayed"
    assert np.isfinite(depth).all() and (depth > 0).all()


def test_write_and_read_round_trip(tmp_path):
    recs = generate(6, 1)
    p = tmp_path / "d.jsonl"
    m = write_dataset(recs, p, seed=1)
    assert m["count"] == 6
    assert m["positives"] + m["negatives"] == sum(len(r["templates"]) for r in recs)
    assert read_dataset(p) == recs
    assert json.loads(open(manifest_path(p)).read()) == m
    q = tmp_path / "e.jsonl"
    assert write_dataset(recs, q, seed=1)["sha256"] == m["sha256"]
    raster, depth, aff = decode_record(recs[0])
    w, h = recs[0]["image_size"]
    assert raster.shape[:2] == depth.shape == (h, w)
    for a in recs[0]["affordances"]:
        assert rle.encode_mask(aff[a["label"]]) == a["rle"]


def test_empty_dataset(tmp_path):
    p = tmp_path / "empty.jsonl"
    m = write_dataset([], p)
    assert m["count"] == 0 and m["positives"] == 0 and p.read_bytes() == b""
    assert read_dataset(p) == []


def test_reader_accepts_nan_grasp(tmp_path):
    rec = make_record(0, 0)
    rec["templates"] = [{"tau": "grasp the duck", "grasp": "NaN", "y": -1},
                        {"tau": "grasp the duck", "grasp": [["NaN", 1], [2, 3]], "y": -1}]
    p = tmp_path / "n.jsonl"
    p.write_text(json.dumps(rec) + "\n")
    (back,) = read_dataset(p)
    assert [t["grasp"] for t in back["templates"]] == [None, None]
    assert validate_record(back) == []


def test_validate_record_problems():
    rec = make_record(0, 0)
    bad = dict(rec, templates=[{"tau": "t", "grasp": None, "y": 1}])
    assert validate_record(bad) == ["positive template without grasp"]
    w, h = rec["image_size"]
    bad = dict(rec, boxes=[{"label": "x", "category": "toys", "box": [0, 0, w, 3]}])
    assert validate_record(bad) == ["box of x outside the image"]
    assert validate_record({"templates": []})[0].startswith("missing")
