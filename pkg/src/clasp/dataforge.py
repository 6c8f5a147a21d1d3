"""Seeded synthetic data engine: samples, affordance masks, depth fusion, templates.

Each sample is a rendered scene (flat-colour raster, depth, boxes), the
visible affordance region of every object, and a list of text/grasp
templates labelled +1 (feasible grasp on the affordance) or -1 (grasp null).
"Replayed" samples stand in for real captures: the sensor depth has holes
and is completed from a scaled depth estimate.
"""
from __future__ import annotations

import base64
import hashlib
import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rle
from .errors import FullyOccluded, NoOverlap
from .geometry import EnergyWeights, Grasp, MaskGeometry, check_feasible, grasp_candidates, score_grasps
from .library import LIBRARY
from .reasoner import raster_png
from .scene import Observation, SceneGenConfig, affordance_mask, render, sample_scene

SOURCES = ("synthetic", "replayed")
KINDS = ("handle", "body", "whole")


@dataclass(frozen=True, eq=False)
class SceneSample:
    raster: bytes
    depth: np.ndarray
    boxes: tuple
    source: str = "synthetic"

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")


@dataclass(frozen=True, eq=False)
class AffordanceRegion:
    object_label: str
    region: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown affordance kind {self.kind!r}")
        if not np.asarray(self.region).any():
            raise ValueError("affordance region must be non-empty")


@dataclass(frozen=True)
class ReasoningTemplate:
    tau: str
    grasp: tuple | None  # ((x1, y1), (x2, y2)) pixels
    y: int

    def __post_init__(self):
        if self.y not in (1, -1):
            raise ValueError("label must be +1 or -1")
        if self.y == 1:
            if self.grasp is None or not all(math.isfinite(c) for p in self.grasp for c in p):
                raise ValueError("positive templates need a finite grasp")
        elif self.grasp is not None:
            raise ValueError("negative templates carry no grasp")

    def to_dict(self):
        g = None if self.grasp is None else [list(p) for p in self.grasp]
        return {"tau": self.tau, "grasp": g, "y": self.y}


# --------------------------------------------------------------------------
# depth


def _valid(d):
    return np.isfinite(d) & (d > 0)


def fuse_depth(d_sensor, d_rgb_est):
    """Sensor depth where valid; elsewhere the estimate rescaled by the median co-valid ratio."""
    s = np.asarray(d_sensor, dtype=float)
    e = np.asarray(d_rgb_est, dtype=float)
    if s.shape != e.shape:
        raise ValueError("depth maps differ in shape")
    vs, ve = _valid(s), _valid(e)
    both = vs & ve
    if not both.any():
        raise NoOverlap("no pixel is valid in both depth maps")
    scale = float(np.median(s[both] / e[both]))
    out = np.where(vs, s, np.nan)
    fill = ~vs & ve
    out[fill] = e[fill] * scale
    return out


def _sensor_and_estimate(depth, obs, rng, hole_frac=0.05):
    """Sensor map with seeded holes, and a piecewise-scaled estimate of the truth."""
    sensor = depth.astype(np.float32).astype(float)
    holes = rng.random(depth.shape) < hole_frac
    # holes cluster on object tops (specular or dark surfaces in real captures)
    holes |= (obs.instance_masks > 0) & (rng.random(depth.shape) < 2 * hole_frac)
    sensor[holes] = 0.0
    global_scale = rng.uniform(0.5, 2.0)
    per_obj = np.ones(depth.shape)
    for b in obs.boxes:
        per_obj[obs.instance_masks == b.object_id] = 1.0 + rng.normal(0.0, 0.01)
    est = depth * global_scale * per_obj
    return sensor, est


# --------------------------------------------------------------------------
# annotation and templates


def kind_for(category):
    return "handle" if category == "tools" else "whole"


def annotate_affordance(sample: SceneSample | Observation, scene, obs: Observation | None = None):
    """Visible affordance region per object; fully hidden ones are returned as skip records."""
    if obs is None:
        obs = sample if isinstance(sample, Observation) else render(scene)
    regions, skipped = [], []
    for obj in scene.objects:
        region = affordance_mask(scene, obj, obs)
        if not region.any():
            skipped.append({"label": obj.label, "reason": FullyOccluded.__name__})
            continue
        regions.append(AffordanceRegion(obj.label, region, kind_for(obj.category)))
    return regions, skipped


def _fmt_pt(p):
    return f"({p[0]:.1f},{p[1]:.1f})"


def _text(label, kind, p1, p2):
    return f"grasp the {label} by the {kind} at {_fmt_pt(p1)}-{_fmt_pt(p2)}"


def _pixel_limits(scene, obs, region):
    depth = float(obs.depth[region].mean())
    return scene.limits.scaled(scene.camera.fx / depth)


def _positives(region: AffordanceRegion, scene, obs, per_object, weights, n_angles, n_offsets, seed):
    mg = MaskGeometry(region.region)
    limits = _pixel_limits(scene, obs, region.region)
    cands = grasp_candidates(mg, n_angles=n_angles, n_offsets=n_offsets, seed=seed)
    if not cands:
        return []
    energies = score_grasps(cands, mg, None, region.region, weights, limits)
    order = [i for i in np.argsort(energies, kind="stable") if np.isfinite(energies[i])]
    out, seen = [], set()
    for i in order:
        g = cands[i]
        key = (round(g.p1.x, 3), round(g.p1.y, 3), round(g.p2.x, 3), round(g.p2.y, 3))
        if key in seen:
            continue
        seen.add(key)
        p1, p2 = (round(g.p1.x, 3), round(g.p1.y, 3)), (round(g.p2.x, 3), round(g.p2.y, 3))
        if not check_feasible(Grasp.from_points(p1, p2), limits):
            continue
        out.append(ReasoningTemplate(_text(region.object_label, region.kind, p1, p2), (p1, p2), 1))
        if len(out) == per_object:
            break
    return out


def _negative(rng, regions, scene, obs):
    present = {o.label for o in scene.objects}
    absent = sorted(set(LIBRARY) - present)
    h, w = obs.depth.shape
    mode = int(rng.integers(3)) if absent else 1 + int(rng.integers(2))
    if mode == 0:
        label = absent[int(rng.integers(len(absent)))]
        kind = kind_for(LIBRARY[label].category)
        p = rng.uniform(0, [w - 1, h - 1, w - 1, h - 1])
        return ReasoningTemplate(_text(label, kind, p[:2], p[2:]), None, -1)
    r = regions[int(rng.integers(len(regions)))]
    if mode == 1:
        # handle for a handle-less object or whole for a tool
        kind = "whole" if r.kind == "handle" else "handle"
        vs, us = np.nonzero(r.region)
        k = int(rng.integers(us.size))
        p = (float(us[k]), float(vs[k]))
        return ReasoningTemplate(_text(r.object_label, kind, p, p), None, -1)
    limits = _pixel_limits(scene, obs, r.region)
    mg = MaskGeometry(r.region)
    a = rng.uniform(0, math.pi)
    half = limits.w_max * rng.uniform(0.8, 1.5)  # full width 1.6-3x the maximum opening
    c = mg.centroid
    d = np.array([math.cos(a), -math.sin(a)])
    p1, p2 = c - half * d, c + half * d
    return ReasoningTemplate(_text(r.object_label, r.kind, p1, p2), None, -1)


def make_templates(regions, scene, per_object=2, neg_ratio=0.25, seed=0, obs=None, weights=EnergyWeights(),
                   n_angles=8, n_offsets=4):
    """Positives ranked by energy on each affordance region, plus seeded negatives.

    Negatives name an absent object, the wrong part, or a grasp wider than
    the gripper; their grasp is always null.  About ``neg_ratio`` of the
    returned list is negative.
    """
    if per_object < 1:
        raise ValueError("per_object must be at least 1")
    if not 0.0 <= neg_ratio <= 1.0:
        raise ValueError("neg_ratio must lie in [0, 1]")
    obs = obs if obs is not None else render(scene)
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0x7E3])
    pos = []
    if neg_ratio < 1.0:
        for k, r in enumerate(regions):
            pos.extend(_positives(r, scene, obs, per_object, weights, n_angles, n_offsets, seed + k))
    if not regions:
        return pos
    if neg_ratio >= 1.0:
        n_neg = per_object * len(regions)
    else:
        n_neg = int(round(len(pos) * neg_ratio / (1.0 - neg_ratio)))
    neg = [_negative(rng, regions, scene, obs) for _ in range(n_neg)]
    allt = pos + neg
    order = rng.permutation(len(allt))
    return [allt[i] for i in order]


# --------------------------------------------------------------------------
# samples and records


@dataclass(frozen=True)
class ForgeConfig:
    objects: int = 3
    per_object: int = 2
    neg_ratio: float = 0.25
    replay_frac: float = 0.4
    hole_frac: float = 0.05
    max_tilt_deg: float = 0.0  # a level camera keeps depth runs long

    def to_dict(self):
        return dict(self.__dict__)


def sample_seed(seed, index):
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(index)]).generate_state(1)[0])


def make_record(seed, index, cfg: ForgeConfig = ForgeConfig()):
    s = sample_seed(seed, index)
    rng = np.random.default_rng(s)
    count = int(rng.integers(1, cfg.objects + 1))
    scene = sample_scene(SceneGenConfig(count=count, max_tilt_deg=cfg.max_tilt_deg), s)
    obs = render(scene)
    source = "replayed" if rng.random() < cfg.replay_frac else "synthetic"
    depth = obs.depth
    if source == "replayed":
        sensor, est = _sensor_and_estimate(depth, obs, rng, cfg.hole_frac)
        depth = fuse_depth(sensor, est)
    sample = SceneSample(raster_png(obs), depth, obs.boxes, source)
    regions, skipped = annotate_affordance(sample, scene, obs)
    templates = make_templates(regions, scene, cfg.per_object, cfg.neg_ratio, s, obs)
    h, w = depth.shape
    return {
        "index": index,
        "seed": s,
        "source": source,
        "image_size": [w, h],
        "raster_png_b64": base64.b64encode(sample.raster).decode("ascii"),
        "depth_f32_rle": rle.encode_depth(depth),
        "boxes": [{"label": b.label, "category": b.category, "box": list(b.box)} for b in obs.boxes],
        "affordances": [{"label": r.object_label, "kind": r.kind, "rle": rle.encode_mask(r.region)} for r in regions],
        "templates": [t.to_dict() for t in templates],
        "skipped": skipped,
    }


def generate(count, seed, cfg: ForgeConfig = ForgeConfig(), workers=1):
    """Records for indices 0..count-1, always returned in index order."""
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda i: make_record(seed, i, cfg), range(count)))
    return [make_record(seed, i, cfg) for i in range(count)]


def _line(record):
    return json.dumps(record, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_dataset(records, path, seed=0):
    """JSON Lines file plus ``<path>.manifest.json``; both written atomically."""
    lines = [_line(r) + "\n" for r in records]
    blob = "".join(lines).encode("utf-8")
    positives = sum(1 for r in records for t in r["templates"] if t["y"] == 1)
    negatives = sum(1 for r in records for t in r["templates"] if t["y"] == -1)
    manifest = {"count": len(records), "positives": positives, "negatives": negatives, "seed": seed,
                "sha256": hashlib.sha256(blob).hexdigest()}
    atomic_write(path, blob)
    atomic_write(manifest_path(path), (json.dumps(manifest, sort_keys=True, indent=1) + "\n").encode())
    return manifest


def manifest_path(path):
    return str(path) + ".manifest.json"


def atomic_write(path, data: bytes):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _normalize(record):
    for t in record.get("templates", []):
        g = t.get("grasp")
        if isinstance(g, str) and g.strip().lower() == "nan":
            t["grasp"] = None
        elif isinstance(g, list) and any(isinstance(c, str) for p in g for c in p):
            t["grasp"] = None  # a "NaN" coordinate invalidates the whole grasp
    return record


def read_dataset(path):
    with open(path, encoding="utf-8") as f:
        return [_normalize(json.loads(line)) for line in f if line.strip()]


def decode_record(record):
    """Arrays back from a record: (raster RGB, depth, {label: affordance mask})."""
    from io import BytesIO

    from PIL import Image

    w, h = record["image_size"]
    raster = np.array(Image.open(BytesIO(base64.b64decode(record["raster_png_b64"]))))
    depth = rle.decode_depth(record["depth_f32_rle"], (h, w))
    aff = {a["label"]: rle.decode_mask(a["rle"], (h, w)) for a in record["affordances"]}
    return raster, depth, aff


def validate_record(record):
    """Problems with one record (empty list = valid)."""
    problems = []
    for key in ("raster_png_b64", "depth_f32_rle", "boxes", "affordances", "templates", "image_size"):
        if key not in record:
            problems.append(f"missing {key}")
    if problems:
        return problems
    w, h = record["image_size"]
    for b in record["boxes"]:
        x0, y0, x1, y1 = b["box"]
        if not (0 <= x0 <= x1 < w and 0 <= y0 <= y1 < h):
            problems.append(f"box of {b['label']} outside the image")
    for t in record["templates"]:
        if t["y"] == 1 and t["grasp"] is None:
            problems.append("positive template without grasp")
        if t["y"] == -1 and t["grasp"] is not None:
            problems.append("negative template with a grasp")
    n = sum(c for _, c in record["depth_f32_rle"])
    if n != w * h:
        problems.append("depth run lengths do not cover the image")
    return problems
