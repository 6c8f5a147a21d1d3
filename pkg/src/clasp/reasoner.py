"""Grasp reasoning: perception + instruction + feedback memory -> (u, v, theta, category).

Three interchangeable backends share one call signature (a ``ReasonRequest``
in, an ``ActionTuple`` out): a ground-truth oracle that minimises the grasp
energy, a perturbed oracle for failure injection, and a remote HTTP client.
"""
from __future__ import annotations

import base64
import io
import json
import math
import re
import socket
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from . import rle
from .errors import (ActionOutOfBounds, MalformedJson, MissingField, NonFinite, NoFeasibleGrasp,
                     ReasonerError, TargetNotVisible, Timeout, Transport, UnexpectedField, UnknownCategory)
from .geometry import (EnergyWeights, GripperLimits, MaskGeometry, Point2, grasp_candidates, optimal_grasp)
from .library import CATEGORIES, LIBRARY

MAX_BODY = 4 * 1024 * 1024
ACTION_KEYS = ("u", "v", "theta", "category")


@dataclass(frozen=True)
class Instruction:
    text: str
    target_label: str | None = None
    target_category: str | None = None

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("instruction text must be non-empty")
        if self.target_category is not None and self.target_category not in CATEGORIES:
            raise ValueError(f"unknown category {self.target_category!r}")

    @classmethod
    def parse(cls, text):
        """Pick out a known object label (longest match first) or a category word."""
        low = text.lower()
        for label in sorted(LIBRARY, key=len, reverse=True):
            if re.search(r"(?<![\w-])%s(?![\w-])" % re.escape(label), low):
                return cls(text, label, LIBRARY[label].category)
        for cat in CATEGORIES:
            if re.search(r"\b%ss?\b" % re.escape(cat[:-1]), low):
                return cls(text, None, cat)
        return cls(text)

    @classmethod
    def for_label(cls, label):
        return cls(f"pick the {label} and put it in the {LIBRARY[label].category} zone",
                   label, LIBRARY[label].category)


@dataclass(frozen=True)
class ActionTuple:
    u: float
    v: float
    theta: float
    category: str

    def __post_init__(self):
        if not all(math.isfinite(x) for x in (self.u, self.v, self.theta)):
            raise ValueError("action values must be finite")
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        t = float(self.theta) % math.pi
        object.__setattr__(self, "theta", 0.0 if t >= math.pi else t)

    def to_json(self):
        return json.dumps({"u": self.u, "v": self.v, "theta": self.theta, "category": self.category})


@dataclass(frozen=True)
class FeedbackEntry:
    attempt: int
    text: str
    shift: Point2
    state: str
    point: Point2  # grasp center that failed

    def to_wire(self):
        return {"attempt": self.attempt, "state": self.state, "text": self.text,
                "shift": [self.shift.x, self.shift.y]}


@dataclass(frozen=True)
class FeedbackMemory:
    capacity: int = 3
    entries: tuple = ()

    def append(self, entry: FeedbackEntry) -> "FeedbackMemory":
        if self.entries and entry.attempt <= self.entries[-1].attempt:
            raise ValueError("attempt indices must increase")
        kept = (self.entries + (entry,))[-self.capacity:]
        return FeedbackMemory(self.capacity, kept)

    @property
    def latest(self):
        return self.entries[-1] if self.entries else None

    def __len__(self):
        return len(self.entries)


def _reject_constant(_):
    return float("nan")


def parse_action(json_text, image_bounds) -> ActionTuple:
    """Strict parser for {"u", "v", "theta", "category"}; each violation has its own error."""
    w, h = image_bounds
    body = json_text.decode("utf-8", "replace") if isinstance(json_text, (bytes, bytearray)) else json_text
    try:
        data = json.loads(body, parse_constant=_reject_constant)
    except (json.JSONDecodeError, TypeError) as e:
        raise MalformedJson(f"response is not JSON: {e}", body) from None
    if not isinstance(data, dict):
        raise MalformedJson("response must be a JSON object", body)
    for k in ACTION_KEYS:
        if k not in data:
            raise MissingField(k, body)
    extra = sorted(set(data) - set(ACTION_KEYS))
    if extra:
        raise UnexpectedField(f"unexpected fields {extra}", body)
    nums = []
    for k in ("u", "v", "theta"):
        x = data[k]
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise MalformedJson(f"field {k!r} must be a number", body)
        x = float(x)
        if not math.isfinite(x):
            raise NonFinite(f"field {k!r} is not finite", body)
        nums.append(x)
    u, v, theta = nums
    if not (0.0 <= u <= w - 1 and 0.0 <= v <= h - 1):
        raise ActionOutOfBounds(f"pixel ({u}, {v}) outside {w}x{h}", body)
    cat = data["category"]
    if not isinstance(cat, str):
        raise MalformedJson("field 'category' must be a string", body)
    if cat not in CATEGORIES:
        raise UnknownCategory(f"unknown category {cat!r}", body)
    return ActionTuple(u, v, theta, cat)


# --------------------------------------------------------------------------
# requests


@dataclass(frozen=True, eq=False)
class ReasonRequest:
    """Inputs to one reasoning call.

    ``perception`` is None in the reasoner-only ablation; the backend then
    sees only the raw observation.  ``affordances`` maps labels to
    affordance masks (ground truth, used by the oracle's semantic term).
    """
    instruction: Instruction
    observation: object
    perception: object | None = None
    memory: FeedbackMemory = field(default_factory=FeedbackMemory)
    attempt: int = 1
    limits: GripperLimits | None = None  # meters
    fx: float = 140.0
    affordances: dict = field(default_factory=dict)
    weights: EnergyWeights = EnergyWeights()
    include_raster: bool = False

    @property
    def image_bounds(self):
        h, w = self.observation.depth.shape
        return w, h


def _select(candidates, instr, label_of, category_of, id_of):
    """Target among candidates: by label, else lowest-id member of the category."""
    if instr.target_label is not None:
        hits = [c for c in candidates if label_of(c) == instr.target_label]
    elif instr.target_category is not None:
        hits = [c for c in candidates if category_of(c) == instr.target_category]
    else:
        hits = []
    if not hits:
        raise TargetNotVisible(f"no visible target for {instr.text!r}")
    return min(hits, key=id_of)


def select_target(request):
    """(detection, mask, descriptor) for the instruction target from the perception prior."""
    p = request.perception
    triples = list(zip(p.detections_kept, p.masks_kept, p.descriptors))
    return _select(triples, request.instruction, lambda t: t[0].label, lambda t: t[0].category,
                   lambda t: t[0].object_id)


def clamp_to_mask(point, mask):
    """Nearest mask pixel when the point falls outside the mask (nearest-pixel test)."""
    u, v = point
    h, w = mask.shape
    iu, iv = int(math.floor(u + 0.5)), int(math.floor(v + 0.5))
    if 0 <= iu < w and 0 <= iv < h and mask[iv, iu]:
        return float(u), float(v)
    vs, us = np.nonzero(mask)
    k = int(np.argmin((us - u) ** 2 + (vs - v) ** 2))
    return float(us[k]), float(vs[k])


def pixel_limits(limits: GripperLimits, fx, depth):
    return limits.scaled(fx / depth)


def _oracle_grasp(request, mask, depth_m, label):
    limits = pixel_limits(request.limits, request.fx, depth_m)
    mg = MaskGeometry(mask)
    cands = grasp_candidates(mg)
    aff = request.affordances.get(label)
    g = optimal_grasp(cands, mg, request.observation.depth, aff, request.weights, limits)
    c = g.center()
    return (c.x, c.y), g.angle()


def _box_fallback(request):
    """Reasoner-only ablation: box center, closing across the shorter box side."""
    obs = request.observation
    rec = _select(list(obs.boxes), request.instruction, lambda b: b.label, lambda b: b.category,
                  lambda b: b.object_id)
    x0, y0, x1, y1 = rec.box
    center = ((x0 + x1) / 2.0, (y0 + y1) / 2.0)
    theta = math.pi / 2 if (x1 - x0) >= (y1 - y0) else 0.0
    return rec, center, theta


def _apply_memory(request, base, mask):
    last = request.memory.latest
    if last is not None:
        base = (last.point.x + last.shift.x, last.point.y + last.shift.y)
    return clamp_to_mask(base, mask) if mask is not None and mask.any() else base


class OracleReasoner:
    """Energy-minimising grasp on the target mask, corrected by the latest memory shift."""

    name = "oracle"

    def choose(self, request):
        """(center, theta, category, mask, equivalent radius) before memory is applied."""
        if request.perception is None:
            rec, center, theta = _box_fallback(request)
            mask = request.observation.instance_masks == rec.object_id
            radius = math.sqrt(mask.sum() / math.pi)
            return center, theta, rec.category, mask, radius
        det, mask, desc = select_target(request)
        center, theta = _oracle_grasp(request, mask, desc.mean_depth, det.label)
        return center, theta, det.category, mask, math.sqrt(desc.area / math.pi)

    def __call__(self, request: ReasonRequest) -> ActionTuple:
        center, theta, category, mask, _ = self.choose(request)
        u, v = _apply_memory(request, center, mask)
        return ActionTuple(u, v, theta, category)


class PerturbedReasoner(OracleReasoner):
    """Oracle whose first-attempt center is displaced by ``offset_frac`` equivalent radii."""

    name = "perturbed"

    def __init__(self, offset_frac=0.6, seed=0):
        if not 0.0 <= offset_frac <= 1.0:
            raise ValueError("offset_frac must lie in [0, 1]")
        self.offset_frac = float(offset_frac)
        self.seed = int(seed)

    def for_episode(self, seed):
        return PerturbedReasoner(self.offset_frac, np.random.SeedSequence([self.seed, int(seed)]).generate_state(1)[0])

    def direction(self):
        a = np.random.default_rng([self.seed & 0xFFFFFFFF, 0xD15]).uniform(0.0, 2.0 * math.pi)
        return math.cos(a), math.sin(a)

    def __call__(self, request):
        center, theta, category, mask, radius = self.choose(request)
        du, dv = self.direction()
        d = self.offset_frac * radius
        base = (center[0] + d * du, center[1] + d * dv)
        u, v = _apply_memory(request, base, mask)
        return ActionTuple(u, v, theta, category)


# --------------------------------------------------------------------------
# wire protocol


def raster_png(obs):
    """Flat-colour stand-in for the RGB image: table grey, one hue per category."""
    from PIL import Image

    palette = {"toys": (220, 80, 60), "tools": (60, 110, 220), "blocks": (70, 180, 90)}
    img = np.full(obs.depth.shape + (3,), 200, dtype=np.uint8)
    for b in obs.boxes:
        img[obs.instance_masks == b.object_id] = palette[b.category]
    buf = io.BytesIO()
    Image.fromarray(img, "RGB").save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def serialize_request(request: ReasonRequest) -> dict:
    w, h = request.image_bounds
    body = {"instruction": request.instruction.text, "image_size": [w, h],
            "detections": [], "descriptors": [], "masks": [],
            "feedback": [e.to_wire() for e in request.memory.entries]}
    p = request.perception
    if p is not None:
        for d in p.detections:
            body["detections"].append({"label": d.label, "category": d.category,
                                       "box": list(d.box), "score": d.score})
        for g in p.descriptors:
            body["descriptors"].append({"label": g.object_label, "centroid": [g.centroid.x, g.centroid.y],
                                        "principal_angle": g.principal_angle, "area": g.area,
                                        "mean_depth": g.mean_depth})
        for d, m in zip(p.detections_kept, p.masks_kept):
            body["masks"].append({"label": d.label, "rle": rle.encode_mask(m)})
    if request.include_raster:
        body["raster"] = base64.b64encode(raster_png(request.observation)).decode("ascii")
    return body


class RemoteReasoner:
    """POSTs the serialized request to ``endpoint`` and parses the reply strictly."""

    name = "remote"

    def __init__(self, endpoint, timeout=5.0, retries=2):
        self.endpoint = endpoint.rstrip("/")
        if not self.endpoint.endswith("/reason"):
            self.endpoint += "/reason"
        self.timeout = float(timeout)
        self.retries = int(retries)

    def __call__(self, request):
        return remote_reason(request, self.endpoint, self.timeout, self.retries)


def remote_reason(request, endpoint, timeout=5.0, retries=2) -> ActionTuple:
    payload = json.dumps(serialize_request(request), separators=(",", ":")).encode()
    if len(payload) > MAX_BODY:
        raise Transport(f"request of {len(payload)} bytes exceeds the 4 MiB limit")
    deadline = time.monotonic() + timeout
    last = None
    for _ in range(retries + 1):
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise Timeout(f"no response from {endpoint} within {timeout}s")
        req = urllib.request.Request(endpoint, data=payload, method="POST",
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=remaining) as resp:
                body = resp.read(MAX_BODY + 1)
        except urllib.error.HTTPError as e:
            # the server answered; the body still has to parse
            body = e.read(MAX_BODY + 1)
        except (socket.timeout, TimeoutError):
            raise Timeout(f"no response from {endpoint} within {timeout}s") from None
        except (urllib.error.URLError, ConnectionError, OSError) as e:
            reason = getattr(e, "reason", e)
            if isinstance(reason, (socket.timeout, TimeoutError)):
                raise Timeout(f"no response from {endpoint} within {timeout}s") from None
            last = e
            continue
        if len(body) > MAX_BODY:
            raise MalformedJson("response exceeds the 4 MiB limit", body[:256].decode("utf-8", "replace"))
        return parse_action(body, request.image_bounds)
    raise Transport(f"could not reach {endpoint}: {last}")


# --------------------------------------------------------------------------
# bundled stub server


def fixed_reply(action):
    text = action.to_json() if isinstance(action, ActionTuple) else action
    return lambda request: (200, text)


def centroid_reply(request):
    """Grasp at the target mask centroid, closing across the principal axis."""
    instr = Instruction.parse(request.get("instruction", " "))
    w, h = request["image_size"]
    for m, d in zip(request.get("masks", []), request.get("detections", [])):
        if m["label"] == instr.target_label or (instr.target_label is None and d["category"] == instr.target_category):
            mask = rle.decode_mask(m["rle"], (h, w))
            vs, us = np.nonzero(mask)
            angle = next((x["principal_angle"] for x in request["descriptors"] if x["label"] == m["label"]), 0.0)
            theta = (angle + math.pi / 2) % math.pi
            return 200, json.dumps({"u": float(us.mean()), "v": float(vs.mean()), "theta": theta,
                                    "category": d["category"]})
    return 404, json.dumps({"error": "target not visible"})


class StubServer:
    """Local reasoning endpoint for tests and demos; ``handler(request_dict) -> (status, body)``."""

    def __init__(self, handler=centroid_reply, host="127.0.0.1", port=0, delay=0.0):
        self.handler = handler
        self.delay = delay
        self.requests = []
        stub = self

        class _Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                if self.path != "/reason":
                    self.send_error(404)
                    return
                n = int(self.headers.get("Content-Length", 0))
                if n > MAX_BODY:
                    self.send_error(413)
                    return
                raw = self.rfile.read(n)
                try:
                    req = json.loads(raw)
                except json.JSONDecodeError:
                    self.send_error(400)
                    return
                stub.requests.append(req)
                if stub.delay:
                    time.sleep(stub.delay)
                status, body = stub.handler(req)
                data = body.encode() if isinstance(body, str) else body
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer((host, port), _Handler)
        self.httpd.daemon_threads = True
        self._thread = None

    @property
    def url(self):
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}/reason"

    def start(self):
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def make_backend(name, *, offset_frac=0.6, seed=0, endpoint=None, timeout=5.0):
    if name == "oracle":
        return OracleReasoner()
    if name == "perturbed":
        return PerturbedReasoner(offset_frac, seed)
    if name == "remote":
        if not endpoint:
            raise ValueError("the remote backend needs an endpoint")
        return RemoteReasoner(endpoint, timeout)
    raise ValueError(f"unknown reasoner backend {name!r}")


__all__ = [
    "Instruction", "ActionTuple", "FeedbackEntry", "FeedbackMemory", "ReasonRequest",
    "parse_action", "OracleReasoner", "PerturbedReasoner", "RemoteReasoner", "remote_reason",
    "serialize_request", "StubServer", "fixed_reply", "centroid_reply", "make_backend",
    "clamp_to_mask", "select_target", "NoFeasibleGrasp", "ReasonerError",
]
