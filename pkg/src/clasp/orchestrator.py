"""Closed-loop episode driver.

One episode: capture and perceive, then up to M attempts of reason, extract
the grasp, convert it to the base frame, execute, re-capture and judge.  A
failed grasp with the judger enabled leaves a diagnostic in the reasoner's
memory; with the heuristic enabled that diagnostic carries the center shift.
Timing is not measured while running: the stage log is scheduled afterwards
on a virtual clock under the chosen policy.
"""
from __future__ import annotations

import hashlib
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import judger as jd
from .errors import (InvalidDepth, NoContact, NoFeasibleGrasp, OutOfImage, ReasonerError, TargetNotVisible)
from .executor import ExecConfig, StepBudget, arm_sleep, execute_grasp, placement_ok
from .geometry import EnergyWeights, MaskGeometry, direction, grasp_along, pixel_to_base
from .library import CATEGORIES, LIBRARY
from .perception import NoiseConfig, perceive
from .reasoner import FeedbackMemory, Instruction, ReasonRequest
from .scene import affordance_mask, rasterize_polygon, render, zone_mask
from .schedule import BENCH_LATENCY, StageLatency, StageRecord, attempt_durations, makespan, plan, schedule

PLACED, GRASPED_NOT_PLACED, FAILED, NO_TARGET = "Placed", "GraspedNotPlaced", "Failed", "NoTarget"
OUTCOMES = (PLACED, GRASPED_NOT_PLACED, FAILED, NO_TARGET)
ABLATIONS = {
    "r": dict(use_perception_prior=False, use_judger=False, use_heuristic=False),
    "rj": dict(use_perception_prior=False, use_judger=True, use_heuristic=False),
    "prj": dict(use_perception_prior=True, use_judger=True, use_heuristic=False),
    "prhj": dict(use_perception_prior=True, use_judger=True, use_heuristic=True),
}
VOCABULARY = tuple(LIBRARY) + CATEGORIES


@dataclass(frozen=True)
class PipelineConfig:
    use_perception_prior: bool = True
    use_judger: bool = True
    use_heuristic: bool = True
    attempts: int = 3
    policy: str = "async"
    stage_latency: StageLatency = BENCH_LATENCY
    budget: StepBudget = StepBudget()
    seed: int = 0
    reperceive: bool = False
    noise: NoiseConfig = NoiseConfig()
    exec_cfg: ExecConfig = ExecConfig()
    judge_cfg: jd.JudgeConfig = jd.JudgeConfig()
    weights: EnergyWeights = EnergyWeights()
    sim_freq: int = 500  # recorded only; the kinematic model has no time step
    control_freq: int = 5

    def __post_init__(self):
        if self.attempts < 1:
            raise ValueError("attempts must be at least 1")
        if self.policy not in ("streaming", "async", "asynchronous"):
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.use_heuristic and not self.use_judger:
            raise ValueError("the heuristic shift needs the judger")

    @classmethod
    def ablation(cls, name, **kw):
        return cls(**ABLATIONS[name], **kw)

    @property
    def ablation_name(self):
        for k, v in ABLATIONS.items():
            if all(getattr(self, f) == x for f, x in v.items()):
                return k
        return "custom"

    def to_dict(self):
        d = asdict(self)
        d["ablation"] = self.ablation_name
        return d

    @classmethod
    def from_dict(cls, d):
        d = {k: v for k, v in d.items() if k != "ablation"}
        nested = {"stage_latency": StageLatency, "budget": StepBudget, "noise": NoiseConfig,
                  "exec_cfg": ExecConfig, "judge_cfg": jd.JudgeConfig, "weights": EnergyWeights}
        for k, typ in nested.items():
            if k in d and isinstance(d[k], dict):
                d[k] = typ(**d[k])
        return cls(**d)


@dataclass(frozen=True)
class AttemptRecord:
    attempt: int
    action: object | None
    grasp: object | None
    base_point: tuple | None
    world_theta: float | None
    exec_result: object | None
    judge_state: str | None
    diagnostic: object | None
    skipped: str = ""  # why no execution happened


@dataclass(eq=False)
class EpisodeResult:
    outcome: str
    attempts_used: int
    trace: list
    judge_states: list
    latency: dict
    log: list
    attempts: list
    memory: FeedbackMemory
    scene_after: object
    target_label: str | None
    episode: int = 0
    sleep_markers: int = 0

    @property
    def executions(self):
        return sum(1 for a in self.attempts if a.exec_result is not None)

    @property
    def grasps(self):
        return sum(1 for a in self.attempts if a.exec_result is not None and a.exec_result.grasped)

    def summary(self):
        return {"episode": self.episode, "target": self.target_label, "outcome": self.outcome,
                "attempts_used": self.attempts_used, "executions": self.executions, "grasps": self.grasps,
                "judge_states": list(self.judge_states), "latency": self.latency,
                "feedback": [e.text for e in self.memory.entries]}


def _digest(*parts):
    h = hashlib.sha256()
    for p in parts:
        h.update(str(p).encode())
    return h.hexdigest()[:12]


def episode_seed(seed, episode):
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(episode)]).generate_state(1)[0])


def _target_record(obs, instr):
    """Observation box of the instruction target (lowest id for category-only)."""
    hits = [b for b in obs.boxes if (b.label == instr.target_label if instr.target_label
                                     else b.category == instr.target_category)]
    return min(hits, key=lambda b: b.object_id) if hits else None


def _target_in(perception, instr):
    if perception is None:
        return None
    for d, m in zip(perception.detections_kept, perception.masks_kept):
        if (d.label == instr.target_label) if instr.target_label else (d.category == instr.target_category):
            return d, m
    return None


def extract_grasp(action, mask):
    """Grasp along the action's line: outermost crossings of the target mask."""
    return grasp_along(MaskGeometry(mask), action.u, action.v, action.theta)


def pix_to_base(grasp, mask, obs, cam):
    """Base-frame grasp point and closing-axis angle for an image-space grasp."""
    c = grasp.center()
    iu, iv = int(round(c.x)), int(round(c.y))
    h, w = mask.shape
    if 0 <= iu < w and 0 <= iv < h and mask[iv, iu]:
        depth = float(obs.depth[iv, iu])
    else:
        depth = float(obs.depth[mask].mean())
    X, Y, Z = pixel_to_base(c.x, c.y, depth, cam)
    d = direction(grasp.angle())
    for sgn in (1.0, -1.0):
        q = (c.x + sgn * d[0], c.y + sgn * d[1])
        if cam.in_image(*q):
            X2, Y2, _ = pixel_to_base(q[0], q[1], depth, cam)
            theta = math.atan2(sgn * (Y2 - Y), sgn * (X2 - X)) % math.pi
            return (X, Y, Z), theta
    raise OutOfImage("grasp center at the image border")


def run_episode(scene, instr: Instruction, backend, config: PipelineConfig = PipelineConfig(), episode=0):
    """Run the closed loop on one scene; every failure mode lands in ``outcome``."""
    seed = episode_seed(config.seed, episode)
    if hasattr(backend, "for_episode"):
        backend = backend.for_episode(seed)
    cam = scene.camera
    M = config.attempts
    memory = FeedbackMemory(M)
    log, attempts, judge_states = [], [], []
    outcome = FAILED
    grasped_any = False
    tick = 0

    def capture(sc):
        nonlocal tick
        o = render(sc, timestamp=tick)
        tick += 1
        return o

    def perceive_obs(o):
        noise = replace(config.noise, seed=seed)
        return perceive(o, VOCABULARY, noise)

    obs = capture(scene)
    P = perceive_obs(obs) if config.use_perception_prior else None
    target_box = _target_record(obs, instr)
    visible = _target_in(P, instr) is not None if config.use_perception_prior else target_box is not None
    log.append(StageRecord("detect", 1, payload=f"obs={obs.digest()[:12]};visible={int(visible)}"))
    attempts_used = 0
    if not visible:
        outcome = NO_TARGET
    else:
        k = 0
        while k < M:
            k += 1
            attempts_used = k
            if k > 1 and config.reperceive:
                obs = capture(scene)
                P = perceive_obs(obs) if config.use_perception_prior else None
                log.append(StageRecord("detect", k, payload=f"obs={obs.digest()[:12]};visible=1"))
            label = instr.target_label or (target_box.label if target_box else None)
            affordances = {}
            tgt = scene.find(label) if label else None
            if tgt is not None and config.use_perception_prior:
                affordances[label] = affordance_mask(scene, tgt, obs)
            request = ReasonRequest(instr, obs, P, memory, k, scene.limits, cam.fx, affordances, config.weights)
            try:
                action = backend(request)
            except TargetNotVisible:
                log.append(StageRecord("reason", k, payload="skip=target-not-visible"))
                outcome = NO_TARGET if not grasped_any else outcome
                break
            except (NoFeasibleGrasp, ReasonerError) as e:
                log.append(StageRecord("reason", k, payload=f"skip={type(e).__name__}"))
                attempts.append(AttemptRecord(k, None, None, None, None, None, None, None, type(e).__name__))
                continue
            log.append(StageRecord("reason", k, payload=f"action={_digest(action)}"))
            # target mask for grasp extraction
            if config.use_perception_prior:
                hit = _target_in(P, instr)
                mask = hit[1] if hit else None
            else:
                rec = _target_record(obs, instr)
                mask = (obs.instance_masks == rec.object_id) if rec else None
            if mask is None or not mask.any():
                attempts.append(AttemptRecord(k, action, None, None, None, None, None, None, "no target mask"))
                log[-1] = replace(log[-1], payload=log[-1].payload + ";skip=no-mask")
                break
            try:
                grasp = extract_grasp(action, mask)
                base, wtheta = pix_to_base(grasp, mask, obs, cam)
            except (NoContact, OutOfImage, InvalidDepth) as e:
                attempts.append(AttemptRecord(k, action, None, None, None, None, None, None, type(e).__name__))
                log[-1] = replace(log[-1], payload=log[-1].payload + f";skip={type(e).__name__}")
                continue
            zone = scene.zone_for(action.category)
            if zone is None:
                attempts.append(AttemptRecord(k, action, grasp, base, wtheta, None, None, None, "no zone"))
                log[-1] = replace(log[-1], payload=log[-1].payload + ";skip=no-zone")
                continue
            res = execute_grasp(scene, base, wtheta, zone, config.budget, config.exec_cfg, seed=seed + k)
            log.append(StageRecord("execute", k, payload=res.failure_kind or ("placed" if res.placed else "grasped")))
            grasped_any |= res.grasped
            scene = res.scene_after
            post = capture(scene)
            Q = perceive_obs(post) if config.use_perception_prior else None
            tgt_label = label
            height = scene.find(tgt_label).height if scene.find(tgt_label) else 0.0
            state = jd.evaluate(obs, post, tgt_label, zone, cam, height, config.judge_cfg)
            judge_states.append(state)
            ok_place = placement_ok(scene, zone, tgt_label)
            gone = (_target_in(Q, instr) is None) if config.use_perception_prior else post.mask_of(tgt_label) is None
            gsucc = jd.grasp_success(obs, post, tgt_label, config.judge_cfg)
            terminal = gone or ok_place or k == M
            log.append(StageRecord("judge", k, early=not terminal,
                                   payload=f"state={state};grasp={int(gsucc)};terminal={int(terminal)}"))
            diag = None
            if not terminal and not gsucc and config.use_judger:
                diag = jd.judger_feedback(obs, post, action, tgt_label, k, config.judge_cfg)
                if not config.use_heuristic:
                    diag = jd.Diagnostic(diag.state, diag.text, jd.Point2(0.0, 0.0), diag.attempt)
                memory = memory.append(diag.entry((action.u, action.v)))
                log.append(StageRecord("feedback", k, payload=_digest(diag.text)))
            attempts.append(AttemptRecord(k, action, grasp, base, wtheta, res, state, diag))
            obs, P = post, Q
            if ok_place:
                outcome = PLACED
                break
            if gone:
                break
        if outcome not in (PLACED, NO_TARGET) and grasped_any:
            outcome = GRASPED_NOT_PLACED
    log.append(StageRecord("sleep", 0))
    arm_sleep(scene)
    trace = schedule(plan([log], config.stage_latency), config.policy)
    for t in range(len(trace)):
        trace[t] = replace(trace[t], episode=episode)
    latency = {"total_ms": makespan(trace), "per_attempt_ms": attempt_durations(trace)}
    return EpisodeResult(outcome, attempts_used, trace, judge_states, latency, log, attempts, memory, scene,
                         instr.target_label or (target_box.label if target_box else None), episode, 1)


# --------------------------------------------------------------------------
# batches


@dataclass(eq=False)
class BatchResult:
    episodes: list
    trace: list
    durations_ms: list
    config: PipelineConfig

    @property
    def total_ms(self):
        return makespan(self.trace)


def run_batch(items, backend, config: PipelineConfig = PipelineConfig(), workers=1, pipelined=True):
    """Run independent (scene, instruction) episodes and schedule them as one robot session.

    Episodes never share state, so they can be computed on any number of
    workers; results are gathered in input order, and the joint schedule
    lets each next scene be perceived during the previous transport.
    """
    items = list(items)
    if not items:
        raise ValueError("batch must be non-empty")

    def one(i):
        scene, instr = items[i]
        return run_episode(scene, instr, backend, config, episode=i)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            episodes = list(pool.map(one, range(len(items))))
    else:
        episodes = [one(i) for i in range(len(items))]
    return _combine(episodes, config, pipelined)


def _combine(episodes, config, pipelined=True):
    from .schedule import episode_durations

    events = plan([e.log for e in episodes], config.stage_latency, pipeline_episodes=pipelined)
    trace = schedule(events, config.policy)
    return BatchResult(episodes, trace, episode_durations(trace), config)


def run_session(scene, instructions, backend, config: PipelineConfig = PipelineConfig()):
    """Episodes one after another on the same evolving scene."""
    episodes = []
    for i, instr in enumerate(instructions):
        ep = run_episode(scene, instr, backend, config, episode=i)
        episodes.append(ep)
        scene = ep.scene_after
    return _combine(episodes, config)


def placed_region(scene, label):
    """Table-plane footprint mask of the labelled object, in observation pixels."""
    obj = scene.find(label)
    if obj is None:
        return None
    return rasterize_polygon(obj.world_polygon, 0.0, scene.camera)


def zone_region(scene, category):
    z = scene.zone_for(category)
    return None if z is None else zone_mask(z, scene.camera)


# --------------------------------------------------------------------------
# trace validation

TOKENS = {"detect": "D", "reason": "R", "execute": "X", "judge": "J", "feedback": "F", "sleep": "S"}
TRACE_LANGUAGE = re.compile(r"^DS$|^D(R(XJF?)?)(D?R(XJF?)?)*S$")


def log_word(log):
    return "".join(TOKENS[r.stage] for r in log)


def _payload(rec):
    return dict(kv.split("=", 1) for kv in rec.payload.split(";") if "=" in kv)


def validate_log(log, config: PipelineConfig):
    """Problems with an episode's stage log (empty list = accepted)."""
    problems = []
    word = log_word(log)
    if not TRACE_LANGUAGE.match(word):
        problems.append(f"word {word!r} outside the control-flow language")
    if word.count("S") != 1 or not word.endswith("S"):
        problems.append("sleep marker must appear exactly once, at the end")
    if word.count("R") > config.attempts:
        problems.append("more reasoning calls than the attempt budget")
    if log and log[0].stage == "detect" and _payload(log[0]).get("visible") == "0" and word != "DS":
        problems.append("empty perception must end the episode at once")
    for i, rec in enumerate(log):
        nxt = log[i + 1].stage if i + 1 < len(log) else None
        if rec.stage == "reason":
            skip = _payload(rec).get("skip")
            if skip and nxt == "execute":
                problems.append(f"attempt {rec.attempt}: executed after skipping ({skip})")
            if skip == "no-zone" and nxt == "sleep" and rec.attempt < config.attempts:
                problems.append(f"attempt {rec.attempt}: a missing zone must continue to the next attempt")
            if not skip and nxt != "execute":
                problems.append(f"attempt {rec.attempt}: reasoning produced an action that was not executed")
        if rec.stage != "judge":
            continue
        p = _payload(rec)
        has_f = i + 1 < len(log) and log[i + 1].stage == "feedback"
        want_f = config.use_judger and p.get("grasp") == "0" and p.get("terminal") == "0"
        if has_f != want_f:
            problems.append(f"attempt {rec.attempt}: feedback presence {has_f} but expected {want_f}")
        if p.get("terminal") == "1" and log[i + 1:] and log[i + 1].stage != "sleep":
            problems.append(f"attempt {rec.attempt}: stages after a terminal judgement")
    attempts = [r.attempt for r in log if r.stage == "reason"]
    if attempts != sorted(attempts) or len(set(attempts)) != len(attempts):
        problems.append("attempt indices must be strictly increasing")
    return problems


def validate_trace(trace, config: PipelineConfig):
    """Timing checks per lane plus the log-level checks on the stage order."""
    problems = []
    by_lane = {}
    for t in trace:
        if t.t_end_ms < t.t_start_ms:
            problems.append(f"{t.stage} ends before it starts")
        by_lane.setdefault(t.lane, []).append(t)
    for lane, evs in by_lane.items():
        evs = sorted(evs, key=lambda e: (e.t_start_ms, e.t_end_ms))
        for a, b in zip(evs, evs[1:]):
            if b.t_start_ms < a.t_end_ms - 1e-9:
                problems.append(f"overlap on lane {lane}: {a.stage} and {b.stage}")
    return problems


def export_trace(trace, path):
    from .schedule import write_trace

    write_trace(trace, path)
