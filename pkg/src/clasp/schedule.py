"""Virtual-clock scheduling of pipeline stages.

Episodes record what ran (a *stage log*); this module turns logs into timed
traces under two policies.  Streaming puts every stage on one lane in program
order.  Asynchronous gives perception, reasoning, execution and judging their
own lanes and starts each stage as soon as its lane is free and its inputs
exist, which makes the makespan the longest path of the dependency graph.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

from .errors import DependencyCycle

STAGES = ("detect", "reason", "execute", "judge", "feedback", "sleep")
LANES = {"detect": "perception", "reason": "reasoning", "execute": "execution",
         "judge": "judging", "feedback": "judging", "sleep": "judging"}
STREAM_LANE = "main"
# approach and close are the first two of five execution phases; a failed
# grasp is observable once they finish
GRASP_MILESTONE = 2.0 / 5.0


@dataclass(frozen=True)
class StageLatency:
    detect_ms: float = 1000.0
    reason_ms: float = 2000.0
    exec_ms: float = 5000.0
    judge_ms: float = 1000.0

    def __post_init__(self):
        if min(self.detect_ms, self.reason_ms, self.exec_ms, self.judge_ms) < 0:
            raise ValueError("stage latencies must be non-negative")

    def of(self, stage):
        return {"detect": self.detect_ms, "reason": self.reason_ms, "execute": self.exec_ms,
                "judge": self.judge_ms}.get(stage, 0.0)


# calibrated so that fifteen one-attempt episodes reproduce the benchmark shape
BENCH_LATENCY = StageLatency(6000.0, 28000.0, 62000.0, 12000.0)


@dataclass(frozen=True)
class StageRecord:
    """One entry of an episode's stage log."""
    stage: str
    attempt: int
    early: bool = False  # judge may start at the grasp milestone (failed, non-final attempt)
    payload: str = ""


@dataclass(frozen=True)
class StageEvent:
    stage: str
    lane: str
    duration_ms: float
    attempt: int
    episode: int
    deps: tuple = ()  # (event index, fraction of that event's duration after its start)
    payload: str = ""


@dataclass(frozen=True)
class TraceEvent:
    lane: str
    stage: str
    t_start_ms: float
    t_end_ms: float
    attempt: int
    episode: int
    payload: str = ""

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


def plan(logs, latency: StageLatency, pipeline_episodes=True):
    """Dependency-annotated events for a sequence of episode stage logs.

    Within an episode: reason waits for the latest detect and judge (a
    re-perception waits for the judged attempt before it); execute
    waits for its reason; judge waits for its execute (only for the grasp
    milestone when the attempt failed and another one follows).  Across
    episodes the next detect waits for the previous episode's last grasp
    milestone, so the next scene is perceived while the arm carries.
    """
    events = []
    prev_milestone = None
    for ep, log in enumerate(logs):
        last = {}
        ep_events = []
        for rec in log:
            if rec.stage not in STAGES:
                raise ValueError(f"unknown stage {rec.stage!r}")
            deps = []
            if rec.stage == "detect":
                if "reason" in last:
                    # re-perception follows the finished (or skipped) attempt
                    deps.extend((last[k], 1.0) for k in ("reason", "execute", "judge", "feedback") if k in last)
                elif prev_milestone is not None and pipeline_episodes:
                    deps.append(prev_milestone)
                elif events and not pipeline_episodes:
                    deps.append((len(events) - 1, 1.0))
            elif rec.stage == "reason":
                for key in ("detect", "judge", "feedback"):
                    if key in last:
                        deps.append((last[key], 1.0))
                if "reason" in last and last.get("execute", -1) < last["reason"]:
                    deps.append((last["reason"], 1.0))  # previous reasoning produced nothing to run
            elif rec.stage == "execute":
                deps.append((last["reason"], 1.0))
            elif rec.stage == "judge":
                deps.append((last["execute"], GRASP_MILESTONE if rec.early else 1.0))
            elif rec.stage == "feedback":
                deps.append((last["judge"], 1.0))
            elif rec.stage == "sleep":
                deps.extend((i, 1.0) for i in ep_events)
            idx = len(events)
            events.append(StageEvent(rec.stage, LANES[rec.stage], latency.of(rec.stage), rec.attempt, ep,
                                     tuple(deps), rec.payload))
            ep_events.append(idx)
            last[rec.stage] = idx
        if "execute" in last:
            prev_milestone = (last["execute"], GRASP_MILESTONE)
    return events


def schedule_streaming(events):
    """Everything serialized on one lane in program order."""
    t = 0.0
    out = []
    for e in events:
        out.append(TraceEvent(STREAM_LANE, e.stage, t, t + e.duration_ms, e.attempt, e.episode, e.payload))
        t += e.duration_ms
    return out


@dataclass
class VirtualClock:
    """Per-lane timelines; ``now[lane]`` is when the lane next becomes free."""
    now: dict = field(default_factory=dict)

    def reserve(self, lane, earliest, duration):
        start = max(self.now.get(lane, 0.0), earliest)
        self.now[lane] = start + duration
        return start


def schedule_async(events):
    """ASAP list schedule honouring per-lane program order and data dependencies."""
    n = len(events)
    lane_prev = [None] * n
    last_on = {}
    for i, e in enumerate(events):
        lane_prev[i] = last_on.get(e.lane)
        last_on[e.lane] = i
    start = [None] * n
    done = 0
    clock = VirtualClock()
    scheduled = [False] * n
    while done < n:
        progressed = False
        for i, e in enumerate(events):
            if scheduled[i]:
                continue
            lp = lane_prev[i]
            if lp is not None and not scheduled[lp]:
                continue
            if any(not (0 <= j < n) or not scheduled[j] for j, _ in e.deps):
                if any(not (0 <= j < n) for j, _ in e.deps):
                    raise DependencyCycle(f"event {i} depends on a missing event")
                continue
            ready = max((start[j] + f * events[j].duration_ms for j, f in e.deps), default=0.0)
            start[i] = clock.reserve(e.lane, ready, e.duration_ms)
            scheduled[i] = True
            done += 1
            progressed = True
        if not progressed:
            raise DependencyCycle("stage dependencies form a cycle")
    return [TraceEvent(e.lane, e.stage, start[i], start[i] + e.duration_ms, e.attempt, e.episode, e.payload)
            for i, e in enumerate(events)]


def schedule(events, policy):
    if policy == "streaming":
        return schedule_streaming(events)
    if policy in ("async", "asynchronous"):
        return schedule_async(events)
    raise ValueError(f"unknown policy {policy!r}")


def makespan(trace):
    return max((t.t_end_ms for t in trace), default=0.0)


def episode_durations(trace):
    """Per-episode increments of completion time (ms), in episode order."""
    ends = {}
    for t in trace:
        ends[t.episode] = max(ends.get(t.episode, 0.0), t.t_end_ms)
    out, prev = [], 0.0
    for ep in sorted(ends):
        out.append(ends[ep] - prev)
        prev = ends[ep]
    return out


def attempt_durations(trace):
    """Per-attempt increments of completion time within one episode's trace."""
    ends = {}
    for t in trace:
        if t.attempt > 0:
            ends[t.attempt] = max(ends.get(t.attempt, 0.0), t.t_end_ms)
    out, prev = [], min((t.t_start_ms for t in trace), default=0.0)
    for a in sorted(ends):
        out.append(ends[a] - prev)
        prev = ends[a]
    return out


def write_trace(trace, path):
    with open(path, "w", encoding="utf-8") as f:
        for t in trace:
            f.write(t.to_json() + "\n")


def read_trace(path):
    with open(path, encoding="utf-8") as f:
        return [TraceEvent(**json.loads(line)) for line in f if line.strip()]


def replay(trace, scale=0.001, sleep=time.sleep, clock=time.monotonic):
    """Re-enact a virtual trace in wall-clock time (``scale`` seconds per virtual ms).

    Returns the measured wall-clock start offsets in seconds, one per event.
    """
    t0 = clock()
    out = []
    for t in sorted(trace, key=lambda e: (e.t_start_ms, e.t_end_ms)):
        wait = t.t_start_ms * scale - (clock() - t0)
        if wait > 0:
            sleep(wait)
        out.append(clock() - t0)
    return out
