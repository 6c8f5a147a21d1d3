"""Planar tabletop world: objects with 3-DoF poses, category zones, rendering."""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from . import polygons as pg
from .errors import OutOfBounds, Penetration, PlacementExhausted, SceneFormatError, UnknownObject
from .geometry import CameraModel, GripperLimits, MAX_TILT, pixel_rays, project_points
from .library import CATEGORIES, LIBRARY

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.theta)):
            raise ValueError("pose must be finite")
        t = float(self.theta) % TWO_PI
        object.__setattr__(self, "theta", 0.0 if t >= TWO_PI else t)
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))


@dataclass(frozen=True)
class ObjectInstance:
    id: int
    category: str
    label: str
    footprint: tuple
    pose: Pose2
    affordance_local: tuple
    height: float

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if not self.height > 0:
            raise ValueError("object height must be positive")

    @classmethod
    def from_library(cls, label, pose, id=0):
        s = LIBRARY[label]
        return cls(id, s.category, label, s.footprint, pose, s.affordance, s.height)

    def validate(self):
        if not pg.is_simple(self.footprint):
            raise ValueError(f"footprint of {self.label!r} is not a simple polygon")
        if not pg.is_simple(self.affordance_local) or not pg.polygon_within(self.affordance_local, self.footprint):
            raise ValueError(f"affordance of {self.label!r} is not inside its footprint")

    @cached_property
    def world_polygon(self):
        return pg.transform(self.footprint, self.pose.x, self.pose.y, self.pose.theta)

    @cached_property
    def world_affordance(self):
        return pg.transform(self.affordance_local, self.pose.x, self.pose.y, self.pose.theta)

    @cached_property
    def centroid(self):
        return pg.area_centroid(self.world_polygon)

    @cached_property
    def pieces(self):
        return pg.convex_pieces(self.footprint)

    def moved(self, pose):
        return replace(self, pose=pose)


@dataclass(frozen=True)
class Zone:
    category: str
    rect: tuple  # (x0, y0, x1, y1) meters

    def __post_init__(self):
        x0, y0, x1, y1 = (float(v) for v in self.rect)
        if not (x1 > x0 and y1 > y0):
            raise ValueError("zone rectangle must have positive area")
        object.__setattr__(self, "rect", (x0, y0, x1, y1))

    def contains(self, x, y):
        x0, y0, x1, y1 = self.rect
        return x0 <= x <= x1 and y0 <= y <= y1

    @property
    def polygon(self):
        x0, y0, x1, y1 = self.rect
        return np.array([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


def default_zones():
    # three 0.15 m squares along the far (+y) edge; blocks in the middle
    y0, y1 = 0.45, 0.60
    return (
        Zone("toys", (0.04, y0, 0.19, y1)),
        Zone("blocks", (0.225, y0, 0.375, y1)),
        Zone("tools", (0.41, y0, 0.56, y1)),
    )


DEFAULT_LIMITS = GripperLimits(0.005, 0.08)


@dataclass(frozen=True)
class TabletopScene:
    objects: tuple = ()
    zones: tuple = field(default_factory=default_zones)
    camera: CameraModel = field(default_factory=CameraModel.default)
    limits: GripperLimits = DEFAULT_LIMITS
    rng_seed: int = 0
    table: tuple = (0.6, 0.6)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "zones", tuple(self.zones))
        cats = [z.category for z in self.zones]
        if len(set(cats)) != len(cats):
            raise ValueError("at most one zone per category")

    def object(self, obj_id):
        for o in self.objects:
            if o.id == obj_id:
                return o
        raise UnknownObject(f"no object with id {obj_id}")

    def find(self, label):
        for o in self.objects:
            if o.label == label:
                return o
        return None

    def zone_for(self, category):
        for z in self.zones:
            if z.category == category:
                return z
        return None

    @property
    def next_id(self):
        return 1 + max((o.id for o in self.objects), default=0)

    def to_dict(self):
        return {
            "seed": self.rng_seed,
            "table": {"w": self.table[0], "h": self.table[1]},
            "camera": self.camera.to_dict(),
            "limits": {"w_min": self.limits.w_min, "w_max": self.limits.w_max},
            "zones": [{"category": z.category, "rect": list(z.rect)} for z in self.zones],
            "objects": [
                {
                    "id": o.id, "label": o.label, "category": o.category,
                    "footprint": [list(p) for p in o.footprint],
                    "affordance": [list(p) for p in o.affordance_local],
                    "pose": {"x": o.pose.x, "y": o.pose.y, "theta": o.pose.theta},
                    "height": o.height,
                }
                for o in self.objects
            ],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def digest(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()


# --------------------------------------------------------------------------
# clearance and mutation


def polygon_clearance(a: ObjectInstance, b: ObjectInstance) -> float:
    """Boundary distance between footprints, or minus the penetration depth."""
    pa, pb = a.world_polygon, b.world_polygon
    if pg.bbox_gap(pa, pb) > pg.EPS:
        return pg.boundary_distance(pa, pb)
    depth = pg.penetration_depth(pa, a.pieces, pb, b.pieces)
    if depth > 0:
        return -depth
    return pg.boundary_distance(pa, pb)


def _clear_of(a, b, gap=0.0):
    if pg.bbox_gap(a.world_polygon, b.world_polygon) > gap + pg.EPS:
        return True
    return polygon_clearance(a, b) >= gap


def within_table(obj, table):
    p = obj.world_polygon
    return bool(np.all(p >= -pg.EPS) and np.all(p[:, 0] <= table[0] + pg.EPS) and np.all(p[:, 1] <= table[1] + pg.EPS))


def check_placement(scene, obj, ignore_id=None, gap=0.0):
    if not within_table(obj, scene.table):
        raise OutOfBounds(f"{obj.label} leaves the table")
    for other in scene.objects:
        if other.id == ignore_id:
            continue
        if not _clear_of(obj, other, gap):
            raise Penetration(f"{obj.label} penetrates {other.label}")


def try_place(scene: TabletopScene, obj: ObjectInstance) -> TabletopScene:
    """New scene with ``obj`` inserted; raises Penetration / OutOfBounds otherwise."""
    if obj.id <= 0 or any(o.id == obj.id for o in scene.objects):
        obj = replace(obj, id=scene.next_id)
    check_placement(scene, obj)
    return replace(scene, objects=scene.objects + (obj,))


def remove_object(scene, obj_id):
    scene.object(obj_id)
    return replace(scene, objects=tuple(o for o in scene.objects if o.id != obj_id))


def move_object(scene, obj_id, pose):
    obj = scene.object(obj_id).moved(pose)
    check_placement(scene, obj, ignore_id=obj_id)
    return replace(scene, objects=tuple(obj if o.id == obj_id else o for o in scene.objects))


def min_clearance(scene):
    objs = scene.objects
    best = math.inf
    for i in range(len(objs)):
        for j in range(i + 1, len(objs)):
            best = min(best, polygon_clearance(objs[i], objs[j]))
    return best


# --------------------------------------------------------------------------
# rendering


@dataclass(frozen=True)
class BoxRecord:
    object_id: int
    label: str
    category: str
    box: tuple  # (x0, y0, x1, y1) inclusive pixel bounds


@dataclass(frozen=True, eq=False)
class Observation:
    depth: np.ndarray
    instance_masks: np.ndarray
    boxes: tuple
    timestamp: int = 0

    @property
    def shape(self):
        return self.depth.shape

    def box_of(self, label):
        for b in self.boxes:
            if b.label == label:
                return b
        return None

    def mask_of(self, label):
        b = self.box_of(label)
        return None if b is None else self.instance_masks == b.object_id

    def digest(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.depth).tobytes())
        h.update(np.ascontiguousarray(self.instance_masks).tobytes())
        h.update(repr(self.boxes).encode())
        h.update(str(self.timestamp).encode())
        return h.hexdigest()

    def __eq__(self, other):
        return isinstance(other, Observation) and self.digest() == other.digest()

    __hash__ = None


def _pixel_grid(cam):
    vs, us = np.mgrid[0:cam.image_h, 0:cam.image_w].astype(float)
    return us, vs


def _plane_hits(cam, rays, z):
    """Camera-frame depth and world XY where each ray meets the plane at height z."""
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (z - cam.origin[2]) / rays[..., 2]
    xy = cam.origin[:2] + s[..., None] * rays[..., :2]
    return s, xy


def _window(cam, poly, z, margin=2):
    pts = np.column_stack([poly, np.full(len(poly), z)])
    uvz = project_points(pts, cam)
    if np.any(uvz[:, 2] <= 0):
        return 0, cam.image_w, 0, cam.image_h
    u0 = max(int(math.floor(uvz[:, 0].min())) - margin, 0)
    u1 = min(int(math.ceil(uvz[:, 0].max())) + margin + 1, cam.image_w)
    v0 = max(int(math.floor(uvz[:, 1].min())) - margin, 0)
    v1 = min(int(math.ceil(uvz[:, 1].max())) + margin + 1, cam.image_h)
    return u0, u1, v0, v1


def rasterize_polygon(poly, z, cam: CameraModel):
    """Pixels whose ray meets the plane at height z inside the world polygon."""
    out = np.zeros((cam.image_h, cam.image_w), dtype=bool)
    u0, u1, v0, v1 = _window(cam, poly, z)
    if u0 >= u1 or v0 >= v1:
        return out
    vs, us = np.mgrid[v0:v1, u0:u1].astype(float)
    s, xy = _plane_hits(cam, pixel_rays(cam, us, vs), z)
    out[v0:v1, u0:u1] = (s > 0) & pg.points_in_polygon(xy, poly)
    return out


def render(scene: TabletopScene, camera: CameraModel | None = None, timestamp: int = 0) -> Observation:
    """Top faces of the extruded footprints, nearest surface winning per pixel."""
    cam = camera or scene.camera
    us, vs = _pixel_grid(cam)
    rays = pixel_rays(cam, us, vs)
    depth, _ = _plane_hits(cam, rays, 0.0)
    depth = np.where(depth > 0, depth, np.inf)
    labels = np.zeros(depth.shape, dtype=np.int32)
    for obj in scene.objects:
        u0, u1, v0, v1 = _window(cam, obj.world_polygon, obj.height)
        if u0 >= u1 or v0 >= v1:
            continue
        s, xy = _plane_hits(cam, rays[v0:v1, u0:u1], obj.height)
        hit = (s > 0) & pg.points_in_polygon(xy, obj.world_polygon) & (s < depth[v0:v1, u0:u1])
        depth[v0:v1, u0:u1][hit] = s[hit]
        labels[v0:v1, u0:u1][hit] = obj.id
    boxes = []
    for obj in scene.objects:
        vv, uu = np.nonzero(labels == obj.id)
        if uu.size:
            boxes.append(BoxRecord(obj.id, obj.label, obj.category,
                                   (int(uu.min()), int(vv.min()), int(uu.max()), int(vv.max()))))
    return Observation(depth, labels, tuple(boxes), timestamp)


def affordance_mask(scene, obj, obs=None, camera=None):
    """Projection of the object's affordance polygon, limited to its visible pixels."""
    cam = camera or scene.camera
    region = rasterize_polygon(obj.world_affordance, obj.height, cam)
    if obs is not None:
        region &= obs.instance_masks == obj.id
    return region


def zone_mask(zone, cam):
    return rasterize_polygon(zone.polygon, 0.0, cam)


# --------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class SceneGenConfig:
    count: int = 5
    labels: tuple | None = None
    categories: tuple = CATEGORIES
    table: tuple = (0.6, 0.6)
    spawn: tuple = (0.04, 0.08, 0.56, 0.42)  # pose x0, y0, x1, y1
    min_gap: float = 0.02
    max_tilt_deg: float = 2.0
    resolution: int = 128
    camera_height: float = 0.75
    limits: GripperLimits = DEFAULT_LIMITS
    max_rejections: int = 1000

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be non-negative")
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
            unknown = [l for l in self.labels if l not in LIBRARY]
            if unknown:
                raise ValueError(f"unknown labels {unknown}")
        if not 0 <= self.max_tilt_deg <= 10:
            raise ValueError("max_tilt_deg must lie in [0, 10]")

    def to_dict(self):
        return {
            "count": self.count, "labels": None if self.labels is None else list(self.labels),
            "categories": list(self.categories), "table": list(self.table), "spawn": list(self.spawn),
            "min_gap": self.min_gap, "max_tilt_deg": self.max_tilt_deg, "resolution": self.resolution,
            "camera_height": self.camera_height,
            "limits": [self.limits.w_min, self.limits.w_max], "max_rejections": self.max_rejections,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "limits" in d:
            d["limits"] = GripperLimits(*d["limits"])
        for k in ("categories", "table", "spawn"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def sample_scene(config: SceneGenConfig, seed: int) -> TabletopScene:
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x5CE7E])
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    tilt = axis * rng.uniform(0.0, min(math.radians(config.max_tilt_deg), MAX_TILT))
    cam = CameraModel.default(config.resolution, config.camera_height,
                              (config.table[0] / 2, config.table[1] / 2), tuple(tilt))
    if config.labels is not None:
        labels = list(config.labels)
        if config.count and len(labels) != config.count:
            labels = [labels[i % len(labels)] for i in range(config.count)]
    else:
        pool = [k for k, s in LIBRARY.items() if s.category in config.categories]
        labels = list(rng.choice(pool, size=config.count, replace=config.count > len(pool))) if config.count else []
    scene = TabletopScene(zones=default_zones(), camera=cam, limits=config.limits,
                          rng_seed=int(seed), table=tuple(config.table))
    x0, y0, x1, y1 = config.spawn
    for label in labels:
        for _ in range(config.max_rejections):
            pose = Pose2(rng.uniform(x0, x1), rng.uniform(y0, y1), rng.uniform(0.0, TWO_PI))
            obj = ObjectInstance.from_library(str(label), pose, scene.next_id)
            try:
                check_placement(scene, obj, gap=config.min_gap)
            except (Penetration, OutOfBounds):
                continue
            scene = replace(scene, objects=scene.objects + (obj,))
            break
        else:
            raise PlacementExhausted(f"could not place {label} after {config.max_rejections} tries")
    return scene


# --------------------------------------------------------------------------
# scene files

_NONFINITE = re.compile(r"(?<![\w\"])(NaN|-?Infinity)(?![\w\"])")


def _line_of(text, offset):
    return text.count("\n", 0, offset) + 1


def _array_offsets(text, key):
    """Source offsets of the elements of the top-level array stored under ``key``."""
    dec = json.JSONDecoder()
    m = re.search(r'"%s"\s*:\s*\[' % re.escape(key), text)
    if not m:
        return []
    pos, out = m.end(), []
    while True:
        while pos < len(text) and text[pos] in " \t\r\n,":
            pos += 1
        if pos >= len(text) or text[pos] == "]":
            return out
        out.append(pos)
        _, pos = dec.raw_decode(text, pos)


def _reject_constant(name):
    raise ValueError(name)


def load_scene(text: str) -> TabletopScene:
    """Parse a scene file; every rejection carries a 1-based source line."""
    m = _NONFINITE.search(text)
    if m:
        # only flag tokens outside string literals
        if text[:m.start()].count('"') % 2 == 0:
            raise SceneFormatError(f"non-finite number {m.group(1)}", _line_of(text, m.start()))
    try:
        data = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as e:
        raise SceneFormatError(f"invalid JSON: {e.msg}", e.lineno) from None
    except ValueError as e:
        raise SceneFormatError(f"non-finite number {e}", None) from None
    obj_lines = [_line_of(text, o) for o in _array_offsets(text, "objects")]
    zone_lines = [_line_of(text, o) for o in _array_offsets(text, "zones")]
    try:
        table = (float(data["table"]["w"]), float(data["table"]["h"]))
        cam = CameraModel.from_dict(data["camera"])
        lim = data.get("limits", {"w_min": DEFAULT_LIMITS.w_min, "w_max": DEFAULT_LIMITS.w_max})
        limits = GripperLimits(float(lim["w_min"]), float(lim["w_max"]))
    except (KeyError, TypeError, ValueError) as e:
        raise SceneFormatError(f"bad header: {e}", 1) from None
    zones = []
    for k, z in enumerate(data.get("zones", [])):
        line = zone_lines[k] if k < len(zone_lines) else None
        try:
            zones.append(Zone(z["category"], tuple(z["rect"])))
        except (KeyError, TypeError, ValueError) as e:
            raise SceneFormatError(f"zone {k}: {e}", line) from None
    for i in range(len(zones)):
        for j in range(i + 1, len(zones)):
            a, b = zones[i].rect, zones[j].rect
            if a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]:
                raise SceneFormatError(f"zones {i} and {j} overlap", zone_lines[j] if j < len(zone_lines) else None)
    try:
        scene = TabletopScene((), tuple(zones), cam, limits, int(data.get("seed", 0)), table)
    except ValueError as e:
        raise SceneFormatError(str(e), 1) from None
    for k, o in enumerate(data.get("objects", [])):
        line = obj_lines[k] if k < len(obj_lines) else None
        try:
            fp = pg.ensure_ccw(o["footprint"])
            aff = pg.ensure_ccw(o.get("affordance", o["footprint"]))
            p = o["pose"]
            obj = ObjectInstance(int(o.get("id", k + 1)), o["category"], o["label"], fp,
                                 Pose2(p["x"], p["y"], p.get("theta", 0.0)), aff, float(o["height"]))
            obj.validate()
        except (KeyError, TypeError, ValueError) as e:
            raise SceneFormatError(f"object {k}: {e}", line) from None
        if any(x.id == obj.id for x in scene.objects):
            raise SceneFormatError(f"object {k}: duplicate id {obj.id}", line)
        try:
            check_placement(scene, obj)
        except (Penetration, OutOfBounds) as e:
            raise SceneFormatError(f"object {k}: {e}", line) from None
        scene = replace(scene, objects=scene.objects + (obj,))
    return scene


def read_scene(path) -> TabletopScene:
    with open(path, encoding="utf-8") as f:
        return load_scene(f.read())


def write_scene(scene, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(scene.to_json())
