from dataclasses import replace

import numpy as np
import pytest

from clasp.orchestrator import (FAILED, NO_TARGET, PLACED, PipelineConfig, log_word, run_batch, run_episode,
                                validate_log, validate_trace)
from clasp.reasoner import Instruction, OracleReasoner, PerturbedReasoner
from clasp.scene import SceneGenConfig, TabletopScene, render, sample_scene
from clasp.schedule import BENCH_LATENCY, StageLatency
from conftest import disk_scene, fuzz_case, single


def test_oracle_single_cuboid_places_first_try():
    ep = run_episode(single("cuboid"), Instruction.for_label("cuboid"), OracleReasoner())
    assert ep.outcome == PLACED and ep.attempts_used == 1
    assert log_word(ep.log) == "DRXJS"
    ep.scene_after.find("cuboid")


def test_empty_scene_is_no_target():
    ep = run_episode(TabletopScene(), Instruction.for_label("cuboid"), OracleReasoner())
    assert ep.outcome == NO_TARGET and ep.executions == 0
    assert log_word(ep.log) == "DS"
    assert validate_log(ep.log, PipelineConfig()) == []


def test_perturbed_disk_recovers_with_feedback():
    for seed in range(10):
        ep = run_episode(disk_scene(), Instruction.for_label("ball"), PerturbedReasoner(0.6, seed),
                         PipelineConfig(seed=seed))
        assert ep.outcome == PLACED and ep.attempts_used <= 3


def test_offsets_shrink_geometrically_toward_centroid():
    hits = 0
    for seed in range(20):
        ep = run_episode(disk_scene(), Instruction.for_label("ball"), PerturbedReasoner(0.6, seed),
                         PipelineConfig(seed=seed))
        pts = [a.action for a in ep.attempts if a.action is not None]
        if len(pts) < 2:
            continue
        hits += 1
        obs = render(disk_scene())
        vs, us = np.nonzero(obs.instance_masks == 1)
        c = np.array([us.mean(), vs.mean()])
        d0 = np.linalg.norm(np.array([pts[0].u, pts[0].v]) - c)
        for k, a in enumerate(pts[1:], 1):
            assert np.linalg.norm(np.array([a.u, a.v]) - c) <= 0.5 ** k * d0 + 1e-9
    assert hits > 0


def test_without_judger_memory_stays_empty():
    for seed in range(6):
        cfg = PipelineConfig.ablation("r", seed=seed)
        ep = run_episode(disk_scene(), Instruction.for_label("ball"), PerturbedReasoner(0.6, seed), cfg)
        assert len(ep.memory) == 0 and "F" not in log_word(ep.log)


def test_judger_without_heuristic_keeps_point():
    cfg = PipelineConfig.ablation("prj", seed=1)
    for seed in range(10):
        ep = run_episode(disk_scene(), Instruction.for_label("ball"), PerturbedReasoner(0.6, seed), cfg)
        acts = [a.action for a in ep.attempts if a.action is not None]
        if len(acts) > 1:
            assert all(e.shift.x == 0 and e.shift.y == 0 for e in ep.memory.entries)
            assert (acts[1].u, acts[1].v) == (acts[0].u, acts[0].v)
            return
    pytest.fail("no multi-attempt episode found")


def test_missing_zone_continues():
    s = replace(single("cuboid"), zones=tuple(z for z in TabletopScene().zones if z.category != "blocks"))
    ep = run_episode(s, Instruction.for_label("cuboid"), OracleReasoner(), PipelineConfig(attempts=3))
    assert ep.outcome == FAILED and ep.executions == 0
    assert log_word(ep.log) == "DRRRS"
    assert validate_log(ep.log, PipelineConfig(attempts=3)) == []


def test_reasoner_only_ablation_runs_without_prior():
    ep = run_episode(single("cuboid"), Instruction.for_label("cuboid"), OracleReasoner(),
                     PipelineConfig.ablation("r"))
    assert ep.outcome == PLACED


def test_no_stages_after_placement_and_budget():
    rng = np.random.default_rng(0)
    for _ in range(40):
        scene, instr, backend, cfg = fuzz_case(rng)
        ep = run_episode(scene, instr, backend, cfg)
        assert ep.attempts_used <= cfg.attempts
        if ep.outcome == PLACED:
            assert log_word(ep.log).endswith("XJS")


def test_fuzzed_episodes_validate():
    rng = np.random.default_rng(11)
    for _ in range(60):
        scene, instr, backend, cfg = fuzz_case(rng)
        ep = run_episode(scene, instr, backend, cfg)
        assert validate_log(ep.log, cfg) == [], log_word(ep.log)
        assert validate_trace(ep.trace, cfg) == []


def test_validator_rejects_bad_logs():
    ep = run_episode(single("cuboid"), Instruction.for_label("cuboid"), OracleReasoner())
    cfg = PipelineConfig()
    assert validate_log(ep.log + ep.log[-1:], cfg)
    assert validate_log(ep.log[:-1], cfg)
    assert validate_log([ep.log[0]] + ep.log[2:], cfg)


def test_streaming_and_async_latency():
    s = run_episode(single("cuboid"), Instruction.for_label("cuboid"), OracleReasoner(),
                    PipelineConfig(policy="streaming", stage_latency=BENCH_LATENCY))
    assert s.latency["total_ms"] == 108000


def test_batch_determinism_across_workers():
    items = [(sample_scene(SceneGenConfig(count=4), s), None) for s in range(6)]
    items = [(sc, Instruction.for_label(sc.objects[0].label)) for sc, _ in items]
    cfg = PipelineConfig(seed=3)
    a = run_batch(items, PerturbedReasoner(0.6, 3), cfg, workers=1)
    b = run_batch(items, PerturbedReasoner(0.6, 3), cfg, workers=4)
    assert [e.summary() for e in a.episodes] == [e.summary() for e in b.episodes]
    assert a.trace == b.trace
    one = run_batch(items[:1], OracleReasoner(), cfg)
    assert one.durations_ms == [one.episodes[0].latency["total_ms"]]


def test_config_round_trip():
    cfg = PipelineConfig.ablation("prj", attempts=2, policy="streaming", seed=9,
                                  stage_latency=StageLatency(1, 2, 3, 4))
    back = PipelineConfig.from_dict(cfg.to_dict())
    assert back == cfg and back.ablation_name == "prj"
    with pytest.raises(ValueError):
        PipelineConfig(attempts=0)
