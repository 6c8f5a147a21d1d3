"""Metrics, batch reports, benchmark preset and run configuration."""
from __future__ import annotations

import json
import math
import os
from collections import OrderedDict
from dataclasses import dataclass, replace

import jsonschema
import numpy as np

from .dataforge import atomic_write
from .errors import EmptyList, EmptyUnion, ZeroAttempts
from .library import LABELS, LIBRARY
from .orchestrator import (PLACED, OUTCOMES, PipelineConfig, placed_region, run_batch, run_session, zone_region)
from .reasoner import Instruction, make_backend
from .scene import ObjectInstance, Pose2, SceneGenConfig, TabletopScene, read_scene, sample_scene, try_place
from .schedule import BENCH_LATENCY, StageLatency

SCHEMA_ID = "clasp-report/1"


def pick_success_rate(n_succ, n_att):
    if n_att < 1:
        raise ZeroAttempts("pick success rate needs at least one attempt")
    if not 0 <= n_succ <= n_att:
        raise ValueError("successes must lie in [0, attempts]")
    return n_succ / n_att


def miou(obj_region, zone_region):
    """Intersection over union by pixel counting."""
    a = np.asarray(obj_region, dtype=bool)
    b = np.asarray(zone_region, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("regions differ in shape")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        raise EmptyUnion("both regions are empty")
    return int(np.count_nonzero(a & b)) / union


def latency_stats(durations):
    """Total, mean and sample variance (n - 1 divisor; 0 for a single value)."""
    d = [float(x) for x in durations]
    if not d:
        raise EmptyList("no durations")
    total = math.fsum(d)
    mean = total / len(d)
    var = math.fsum((x - mean) ** 2 for x in d) / (len(d) - 1) if len(d) > 1 else 0.0
    return {"total": total, "mean": mean, "variance": var}


# --------------------------------------------------------------------------
# report schema

_RATE = {"type": "number", "minimum": 0, "maximum": 1}
_COUNTS = {
    "type": "object",
    "additionalProperties": {
        "type": "object",
        "required": ["attempts", "successes", "pick_rate", "episodes", "placed"],
        "properties": {"attempts": {"type": "integer", "minimum": 0},
                       "successes": {"type": "integer", "minimum": 0},
                       "pick_rate": _RATE,
                       "episodes": {"type": "integer", "minimum": 0},
                       "placed": {"type": "integer", "minimum": 0}},
    },
}
_LATENCY = {
    "type": "object",
    "required": ["total_s", "avg_s", "var_s2", "variance", "episodes"],
    "properties": {"total_s": {"type": "number", "minimum": 0}, "avg_s": {"type": "number", "minimum": 0},
                   "var_s2": {"type": "number", "minimum": 0}, "variance": {"const": "sample"},
                   "episodes": {"type": "integer", "minimum": 1}},
}
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "kind", "seed", "config_echo", "per_object", "per_category", "pick_success_rate",
                 "task_success_rate", "mean_iou", "latency", "outcomes", "episodes"],
    "properties": {
        "schema": {"const": SCHEMA_ID},
        "kind": {"enum": ["run", "bench"]},
        "seed": {"type": "integer"},
        "config_echo": {"type": "object"},
        "per_object": _COUNTS,
        "per_category": _COUNTS,
        "pick_success_rate": _RATE,
        "task_success_rate": _RATE,
        "mean_iou": _RATE,
        "latency": _LATENCY,
        "outcomes": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 0}},
        "episodes": {"type": "array", "items": {"type": "object"}},
        "comparison": {
            "type": "object",
            "required": ["streaming", "async", "reduction"],
            "properties": {"streaming": _LATENCY, "async": _LATENCY, "reduction": {"type": "number"}},
        },
    },
}


def validate_report(report):
    jsonschema.validate(report, REPORT_SCHEMA)
    for group in ("per_object", "per_category"):
        for k, v in report[group].items():
            if v["successes"] > v["attempts"]:
                raise jsonschema.ValidationError(f"{group}[{k}]: successes exceed attempts")
    lat = report["latency"]
    if not math.isclose(lat["avg_s"] * lat["episodes"], lat["total_s"], rel_tol=1e-9, abs_tol=1e-9):
        raise jsonschema.ValidationError("average latency inconsistent with total")
    return report


def _latency_block(durations_ms):
    st = latency_stats([d / 1000.0 for d in durations_ms])
    return {"total_s": st["total"], "avg_s": st["mean"], "var_s2": st["variance"], "variance": "sample",
            "episodes": len(durations_ms)}


def _counts(episodes, key):
    out = OrderedDict()
    for e in episodes:
        k = key(e)
        if k is None:
            continue
        c = out.setdefault(k, {"attempts": 0, "successes": 0, "pick_rate": 0.0, "episodes": 0, "placed": 0})
        c["attempts"] += e.executions
        c["successes"] += e.grasps
        c["episodes"] += 1
        c["placed"] += int(e.outcome == PLACED)
    for c in out.values():
        c["pick_rate"] = pick_success_rate(c["successes"], c["attempts"]) if c["attempts"] else 0.0
    return dict(sorted(out.items()))


def episode_iou(ep):
    if ep.outcome != PLACED or ep.target_label is None:
        return None
    obj = placed_region(ep.scene_after, ep.target_label)
    zone = zone_region(ep.scene_after, LIBRARY[ep.target_label].category) if ep.target_label in LIBRARY else None
    if obj is None or zone is None:
        return None
    return miou(obj, zone)


def build_report(batch, config_echo, seed, kind="run"):
    eps = batch.episodes
    n_att = sum(e.executions for e in eps)
    n_succ = sum(e.grasps for e in eps)
    ious = [x for x in (episode_iou(e) for e in eps) if x is not None]
    outcomes = {o: sum(1 for e in eps if e.outcome == o) for o in OUTCOMES}
    report = {
        "schema": SCHEMA_ID,
        "kind": kind,
        "seed": int(seed),
        "config_echo": config_echo,
        "per_object": _counts(eps, lambda e: e.target_label),
        "per_category": _counts(eps, lambda e: LIBRARY[e.target_label].category if e.target_label in LIBRARY else None),
        "pick_success_rate": pick_success_rate(n_succ, n_att) if n_att else 0.0,
        "task_success_rate": outcomes[PLACED] / len(eps),
        "mean_iou": float(np.mean(ious)) if ious else 0.0,
        "latency": _latency_block(batch.durations_ms),
        "outcomes": outcomes,
        "episodes": [_clean(e.summary()) for e in eps],
    }
    return report


def _clean(obj):
    """JSON-safe copy (tuples to lists, numpy scalars to Python)."""
    return json.loads(json.dumps(obj, default=lambda o: o.item() if hasattr(o, "item") else str(o)))


def dump_report(report):
    return json.dumps(report, sort_keys=True, indent=1) + "\n"


def write_report(report, path):
    validate_report(report)
    atomic_write(path, dump_report(report).encode("utf-8"))


# --------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce one CLI run."""
    scene_file: str | None = None
    gen_count: int = 0
    objects: int = 5
    reasoner: str = "oracle"
    endpoint: str | None = None
    timeout: float = 5.0
    offset_frac: float = 0.6
    pipeline: PipelineConfig = PipelineConfig()
    seed: int = 0
    workers: int = 1
    report: str | None = None
    trace: str | None = None

    def __post_init__(self):
        if (self.scene_file is None) == (self.gen_count <= 0):
            raise ValueError("give exactly one of a scene file or a positive generator count")
        if self.scene_file is not None and not os.path.exists(self.scene_file):
            raise FileNotFoundError(self.scene_file)
        if self.reasoner not in ("oracle", "perturbed", "remote"):
            raise ValueError(f"unknown reasoner {self.reasoner!r}")
        if self.reasoner == "remote" and not self.endpoint:
            raise ValueError("the remote reasoner needs an endpoint")

    def to_dict(self):
        d = {k: getattr(self, k) for k in ("scene_file", "gen_count", "objects", "reasoner", "endpoint",
                                           "timeout", "offset_frac", "seed", "workers")}
        d["pipeline"] = self.pipeline.to_dict()
        return d

    @classmethod
    def from_dict(cls, d, **overrides):
        d = dict(d)
        d["pipeline"] = PipelineConfig.from_dict(d.get("pipeline", {}))
        d.update(overrides)
        return cls(**d)

    def backend(self):
        return make_backend(self.reasoner, offset_frac=self.offset_frac, seed=self.seed,
                            endpoint=self.endpoint, timeout=self.timeout)


def generated_items(count, objects, seed):
    """``count`` seeded clutter scenes, each with a seeded target among its objects."""
    items = []
    for i in range(count):
        s = int(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, i, 0x6E4]).generate_state(1)[0])
        scene = sample_scene(SceneGenConfig(count=objects), s)
        rng = np.random.default_rng(s)
        target = scene.objects[int(rng.integers(len(scene.objects)))]
        items.append((scene, Instruction.for_label(target.label)))
    return items


def execute_run(cfg: RunConfig):
    """Run episodes per the config; returns (report, batch)."""
    pipe = replace(cfg.pipeline, seed=cfg.seed)
    backend = cfg.backend()
    if cfg.scene_file is not None:
        scene = read_scene(cfg.scene_file)
        instrs = [Instruction.for_label(o.label) for o in scene.objects]
        if not instrs:
            raise ValueError("scene file holds no objects")
        batch = run_session(scene, instrs, backend, pipe)
    else:
        batch = run_batch(generated_items(cfg.gen_count, cfg.objects, cfg.seed), backend, pipe, cfg.workers)
    report = build_report(batch, cfg.to_dict(), cfg.seed, "run")
    return report, batch


# --------------------------------------------------------------------------
# latency benchmark

BENCH_POSE = Pose2(0.3, 0.25, 0.0)


def bench_items():
    """Fifteen single-object scenes, one per library label, at a fixed pose."""
    items = []
    for label in LABELS:
        scene = try_place(TabletopScene(), ObjectInstance.from_library(label, BENCH_POSE))
        items.append((scene, Instruction.for_label(label)))
    return items


def run_bench(seed=0, latency: StageLatency = BENCH_LATENCY, workers=1, attempts=3):
    """Both policies on the fixture; the report is the async run plus a comparison block."""
    results = {}
    for policy in ("streaming", "async"):
        cfg = PipelineConfig(policy=policy, stage_latency=latency, seed=seed, attempts=attempts)
        results[policy] = run_batch(bench_items(), make_backend("oracle"), cfg, workers)
    echo = {"bench": {"labels": list(LABELS), "pose": [BENCH_POSE.x, BENCH_POSE.y, BENCH_POSE.theta]},
            "pipeline": results["async"].config.to_dict(), "seed": seed}
    report = build_report(results["async"], echo, seed, "bench")
    s = _latency_block(results["streaming"].durations_ms)
    a = _latency_block(results["async"].durations_ms)
    report["comparison"] = {"streaming": s, "async": a,
                            "reduction": (s["total_s"] - a["total_s"]) / s["total_s"] if s["total_s"] else 0.0}
    return report, results


def resolve_seed(flag_value, env=None):
    """CLI flag, else CLASP_SEED, else 0."""
    if flag_value is not None:
        return int(flag_value)
    env = os.environ if env is None else env
    raw = env.get("CLASP_SEED")
    if raw is None or raw == "":
        return 0
    return int(raw)
