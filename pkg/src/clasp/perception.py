"""Two-pathway perception over rendered observations.

The geometric pathway returns boxes, masks and explicit centroid/pose
descriptors; the semantic pathway returns a fixed-length embedding.  Both are
ground-truth oracles with optional seeded noise rather than learned models.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Point2
from .library import CATEGORIES

EMBED_DIM = 64
DEPTH_BINS = 16
DEPTH_RANGE = (0.6, 0.9)  # meters; covers table and object tops for the default camera
ANGLE_TIE = 0.02  # relative eigenvalue gap below which orientation is undefined


@dataclass(frozen=True)
class Detection:
    box: tuple  # (x0, y0, x1, y1) inclusive pixels
    label: str
    category: str
    score: float
    object_id: int = 0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("score must lie in [0, 1]")


@dataclass(frozen=True)
class GeomDescriptor:
    object_label: str
    centroid: Point2
    principal_angle: float
    area: int
    boundary: tuple
    mean_depth: float
    object_id: int = 0


@dataclass(frozen=True)
class Embedding:
    vector: tuple

    def __post_init__(self):
        v = tuple(float(x) for x in self.vector)
        if len(v) != EMBED_DIM or not all(math.isfinite(x) for x in v):
            raise ValueError(f"embedding must hold {EMBED_DIM} finite values")
        object.__setattr__(self, "vector", v)

    def as_array(self):
        return np.array(self.vector)


@dataclass(frozen=True)
class NoiseConfig:
    box_sigma: float = 0.0
    mask_dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.box_sigma < 0:
            raise ValueError("box_sigma must be non-negative")
        if not 0.0 <= self.mask_dropout <= 1.0:
            raise ValueError("mask_dropout must lie in [0, 1]")


@dataclass(frozen=True)
class Perception:
    """Everything one perceive call hands to the reasoner."""
    embedding: Embedding
    detections: tuple
    masks: tuple
    descriptors: tuple
    warnings: tuple = field(default=())

    def __bool__(self):
        return len(self.descriptors) > 0

    def find(self, label):
        for det, mask, desc in zip(self.detections_kept, self.masks_kept, self.descriptors):
            if det.label == label:
                return det, mask, desc
        return None

    @property
    def detections_kept(self):
        return tuple(d for d, m in zip(self.detections, self.masks) if m.any())

    @property
    def masks_kept(self):
        return tuple(m for m in self.masks if m.any())


def _box_iou(a, b):
    ix = min(a[2], b[2]) - max(a[0], b[0]) + 1
    iy = min(a[3], b[3]) - max(a[1], b[1]) + 1
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    area = lambda r: (r[2] - r[0] + 1) * (r[3] - r[1] + 1)
    return inter / (area(a) + area(b) - inter)


def detect(obs, vocabulary, noise: NoiseConfig = NoiseConfig()):
    """One detection per visible vocabulary object, with seeded box noise and dropout."""
    vocab = set(vocabulary)
    if not vocab:
        raise ValueError("vocabulary must be non-empty")
    h, w = obs.depth.shape
    rng = np.random.default_rng(np.random.SeedSequence([int(noise.seed) & 0xFFFFFFFF, int(obs.timestamp)]))
    out = []
    for rec in obs.boxes:
        # draw for every box so dropping one object never reshuffles another's noise
        jitter = rng.normal(0.0, 1.0, size=4)
        drop = rng.random()
        if rec.label not in vocab and rec.category not in vocab:
            continue
        if drop < noise.mask_dropout:
            continue
        box = np.array(rec.box, dtype=float) + noise.box_sigma * jitter
        box = np.rint(box).astype(int)
        box[[0, 2]] = np.clip(box[[0, 2]], 0, w - 1)
        box[[1, 3]] = np.clip(box[[1, 3]], 0, h - 1)
        x0, x1 = sorted((int(box[0]), int(box[2])))
        y0, y1 = sorted((int(box[1]), int(box[3])))
        nb = (x0, y0, x1, y1)
        out.append(Detection(nb, rec.label, rec.category, round(_box_iou(nb, rec.box), 12), rec.object_id))
    return out


def segment(obs, detections):
    masks = []
    for d in detections:
        m = np.zeros(obs.instance_masks.shape, dtype=bool)
        x0, y0, x1, y1 = d.box
        m[y0:y1 + 1, x0:x1 + 1] = obs.instance_masks[y0:y1 + 1, x0:x1 + 1] == d.object_id
        masks.append(m)
    return masks


# Moore neighbourhood in clockwise order (screen coordinates), starting west
_MOORE = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))


def trace_boundary(mask):
    """Outer contour (Moore-neighbour tracing) of the first row-major component, as (u, v) tuples."""
    mask = np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return ()
    h, w = mask.shape
    start = (int(idx[0] % w), int(idx[0] // w))

    def on(p):
        return 0 <= p[0] < w and 0 <= p[1] < h and mask[p[1], p[0]]

    contour = [start]
    cur, back = start, (start[0] - 1, start[1])
    first_back = back
    for _ in range(8 * mask.size + 8):
        k0 = _MOORE.index((back[0] - cur[0], back[1] - cur[1]))
        prev = back
        for k in range(1, 9):
            d = _MOORE[(k0 + k) % 8]
            nxt = (cur[0] + d[0], cur[1] + d[1])
            if on(nxt):
                break
            prev = nxt
        else:
            return tuple(contour)  # isolated pixel
        cur, back = nxt, prev
        # Jacob's criterion: back at start, entered the same way as initially
        if cur == start and back == first_back:
            break
        if cur == start and len(contour) > 1 and contour[1] == _next_after(start, back, on):
            break
        contour.append(cur)
    return tuple(contour)


def _next_after(p, back, on):
    k0 = _MOORE.index((back[0] - p[0], back[1] - p[1]))
    for k in range(1, 9):
        d = _MOORE[(k0 + k) % 8]
        q = (p[0] + d[0], p[1] + d[1])
        if on(q):
            return q
    return None


def principal_angle(mask):
    vs, us = np.nonzero(mask)
    if us.size < 2:
        return 0.0
    du, dv = us - us.mean(), vs - vs.mean()
    cov = np.array([[np.mean(du * du), np.mean(du * dv)], [np.mean(du * dv), np.mean(dv * dv)]])
    evals, evecs = np.linalg.eigh(cov)
    if evals[1] <= 0 or (evals[1] - evals[0]) <= ANGLE_TIE * evals[1]:
        return 0.0
    eu, ev = evecs[:, 1]
    a = math.atan2(-ev, eu) % math.pi
    return 0.0 if a >= math.pi else a


def geom_descriptors(masks, obs, labels=None, object_ids=None, warnings=None):
    """Descriptors for non-empty masks; empty ones are skipped and noted in ``warnings``."""
    out = []
    for k, m in enumerate(masks):
        label = labels[k] if labels is not None else str(k)
        if not m.any():
            if warnings is not None:
                warnings.append(f"empty mask for {label}; skipped")
            continue
        vs, us = np.nonzero(m)
        out.append(GeomDescriptor(
            label, Point2(us.mean(), vs.mean()), principal_angle(m), int(us.size),
            trace_boundary(m), float(obs.depth[m].mean()),
            object_ids[k] if object_ids is not None else 0,
        ))
    return out


def embed(obs):
    """Deterministic 64-d summary: category coverage, depth histogram, counts, occupancy."""
    h, w = obs.depth.shape
    n_px = float(h * w)
    cat_of = {b.object_id: b.category for b in obs.boxes}
    labels = obs.instance_masks
    cover = [sum(float(np.count_nonzero(labels == i)) for i, c in cat_of.items() if c == cat) / n_px
             for cat in CATEGORIES]
    finite = obs.depth[np.isfinite(obs.depth)]
    hist, _ = np.histogram(finite, bins=DEPTH_BINS, range=DEPTH_RANGE)
    hist = hist / n_px
    counts = [len(obs.boxes) / 15.0] + [sum(1 for c in cat_of.values() if c == cat) / 15.0 for cat in CATEGORIES]
    occ = []
    fg = labels > 0
    for r in np.array_split(np.arange(h), 6):
        for c in np.array_split(np.arange(w), 6):
            occ.append(float(fg[np.ix_(r, c)].mean()))
    vec = cover + list(hist) + counts + occ
    vec += [0.0] * (EMBED_DIM - len(vec))
    return Embedding(vec)


def perceive(obs, vocabulary, noise: NoiseConfig = NoiseConfig()) -> Perception:
    dets = detect(obs, vocabulary, noise)
    masks = segment(obs, dets)
    warnings = []
    descs = geom_descriptors(masks, obs, [d.label for d in dets], [d.object_id for d in dets], warnings)
    return Perception(embed(obs), tuple(dets), tuple(masks), tuple(descs), tuple(warnings))
