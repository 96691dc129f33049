"""Synthetic multi-agent scenes and a single-agent detector emulator.

Randomness is drawn from named sub-streams keyed by ``(seed, stream, ...)`` so
that, e.g., changing the false-positive rate never moves an object.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import (
    IDENTITY,
    OrientedBox3D,
    Pose2D,
    AREA_EPS,
    bev_intersection_area,
    inverse,
    transform_box,
    transform_points,
    wrap_angle,
)

DEFAULT_FEATURE_DIM = 256
DEFAULT_QUERY_CAP = 300
SCENE_SCHEMA_VERSION = 1


class PlacementExhausted(RuntimeError):
    """Raised when non-overlapping placement fails within the attempt budget."""


def stream_rng(seed: int, stream: str, *keys: int) -> np.random.Generator:
    """Independent generator for a named stream."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(stream.encode()), *(int(k) for k in keys)])


def embed(object_id: int, d: int = DEFAULT_FEATURE_DIM) -> np.ndarray:
    """Unit-norm pseudo-random embedding keyed only by object id."""
    v = stream_rng(0, "embed", object_id, d).standard_normal(d)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class SceneObject:
    id: int
    box: OrientedBox3D
    cls: str = "vehicle"


@dataclass(frozen=True)
class AgentConfig:
    agent_id: int
    pose: Pose2D = IDENTITY
    range_x: float = 100.0
    range_y: float = 40.0
    detect_base_prob: float = 1.0
    detect_range_decay: float = 0.0
    loc_noise_sigma: float = 0.0
    yaw_noise_sigma: float = 0.0
    score_base: float = 0.9
    score_slope: float = 0.5
    score_noise: float = 0.0
    feature_scale: float = 12.0
    feature_offset: float = 0.0
    feature_noise_sigma: float = 0.0
    false_positive_rate: float = 0.0
    fp_score_range: tuple[float, float] = (0.01, 0.3)
    query_cap: int = DEFAULT_QUERY_CAP

    def __post_init__(self):
        if not (self.range_x > 0 and self.range_y > 0):
            raise ValueError("agent ranges must be positive")
        if not 0.0 <= self.detect_base_prob <= 1.0:
            raise ValueError("detect_base_prob must lie in [0, 1]")
        if min(self.loc_noise_sigma, self.yaw_noise_sigma, self.score_noise,
               self.feature_noise_sigma, self.false_positive_rate, self.detect_range_decay) < 0:
            raise ValueError("noise parameters and rates must be non-negative")

    def in_range(self, x: float, y: float) -> bool:
        return abs(x) <= self.range_x and abs(y) <= self.range_y


@dataclass(frozen=True)
class Instance:
    """One detected object candidate: feature, decoded box, confidence."""

    instance_id: int
    agent_id: int
    feature: np.ndarray = field(compare=False)
    box: OrientedBox3D
    score: float
    frame: str = "agent"

    def __post_init__(self):
        if self.frame not in ("agent", "ego"):
            raise ValueError(f"unknown frame tag {self.frame!r}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("score must lie in [0, 1]")

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (
            (self.instance_id, self.agent_id, self.box, self.score, self.frame)
            == (other.instance_id, other.agent_id, other.box, other.score, other.frame)
            and self.feature.shape == other.feature.shape
            and self.feature.tobytes() == other.feature.tobytes()
        )

    __hash__ = None


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    frame: str = "agent"

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class Layout:
    """Scene generation knobs.

    Objects are dropped uniformly in ``object_region`` (half extents, world
    frame, centred on the ego) with ``count_mode`` either ``fixed`` or
    ``poisson`` (``n_objects`` then being the mean per frame).
    """

    object_region: tuple[float, float] = (50.0, 30.0)
    length_range: tuple[float, float] = (3.8, 5.0)
    width_range: tuple[float, float] = (1.7, 2.1)
    height_range: tuple[float, float] = (1.4, 1.9)
    count_mode: str = "fixed"
    agent_spread: float = 25.0
    agent_min_dist: float = 8.0
    attempts_per_object: int = 200
    agent_defaults: dict = field(default_factory=dict)
    ego_overrides: dict = field(default_factory=dict)
    collaborator_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.count_mode not in ("fixed", "poisson"):
            raise ValueError(f"count_mode must be 'fixed' or 'poisson', got {self.count_mode!r}")


@dataclass
class Scene:
    seed: int
    agents: list[AgentConfig]
    frames: list[list[SceneObject]]
    layout: Layout = field(default_factory=Layout)

    @property
    def frame_count(self) -> int:
        return len(self.frames)


def _place_objects(rng, n, layout: Layout, first_id: int) -> list[SceneObject]:
    hx, hy = layout.object_region
    placed: list[SceneObject] = []
    budget = layout.attempts_per_object * max(n, 1)
    attempts = 0
    while len(placed) < n:
        if attempts >= budget:
            raise PlacementExhausted(
                f"placement-exhausted: placed {len(placed)} of {n} objects after {attempts} attempts")
        attempts += 1
        length = rng.uniform(*layout.length_range)
        width = rng.uniform(*layout.width_range)
        height = rng.uniform(*layout.height_range)
        box = OrientedBox3D(
            rng.uniform(-hx, hx), rng.uniform(-hy, hy), length, width,
            rng.uniform(-math.pi, math.pi), 0.5 * height, height,
        )
        if any(bev_intersection_area(box, o.box) >= AREA_EPS for o in placed):
            continue
        placed.append(SceneObject(first_id + len(placed), box))
    return placed


def _place_agents(seed: int, n_agents: int, layout: Layout) -> list[AgentConfig]:
    rng = stream_rng(seed, "agents")
    agents = []
    for k in range(n_agents):
        params = dict(layout.agent_defaults)
        params.update(layout.ego_overrides if k == 0 else layout.collaborator_overrides)
        if k == 0:
            pose = IDENTITY
        else:
            pose = None
            for _ in range(1000):
                r = layout.agent_spread * math.sqrt(rng.uniform())
                th = rng.uniform(-math.pi, math.pi)
                x, y = r * math.cos(th), r * math.sin(th)
                if all(math.hypot(x - a.pose.x, y - a.pose.y) >= layout.agent_min_dist for a in agents):
                    pose = Pose2D(x, y, rng.uniform(-math.pi, math.pi))
                    break
            if pose is None:
                raise PlacementExhausted("placement-exhausted: could not separate agents")
        agents.append(AgentConfig(agent_id=k, pose=pose, **params))
    return agents


def generate_scene(seed: int, n_objects: int, n_agents: int, layout: Layout | None = None,
                   frame: int = 0, first_id: int = 0) -> tuple[list[SceneObject], list[AgentConfig]]:
    """One frame of ground truth plus the agent roster (agent 0 is the ego)."""
    if n_objects < 0:
        raise ValueError("n_objects must be >= 0")
    if n_agents < 1:
        raise ValueError("n_agents must be >= 1")
    layout = layout or Layout()
    rng = stream_rng(seed, "objects", frame)
    n = int(rng.poisson(n_objects)) if layout.count_mode == "poisson" else n_objects
    objects = _place_objects(rng, n, layout, first_id)
    return objects, _place_agents(seed, n_agents, layout)


def generate_frames(seed: int, n_objects: int, n_agents: int, frame_count: int,
                    layout: Layout | None = None) -> Scene:
    layout = layout or Layout()
    frames = []
    agents: list[AgentConfig] = []
    next_id = 0
    for t in range(frame_count):
        objects, agents = generate_scene(seed, n_objects, n_agents, layout, frame=t, first_id=next_id)
        next_id += len(objects)
        frames.append(objects)
    if not agents:
        agents = _place_agents(seed, n_agents, layout)
    return Scene(seed, agents, frames, layout)


def agent_frame_box(obj_box: OrientedBox3D, agent: AgentConfig) -> OrientedBox3D:
    return transform_box(inverse(agent.pose), obj_box)


def emulate_detections(objects: Sequence[SceneObject], cfg: AgentConfig, seed: int,
                       frame: int = 0, d: int = DEFAULT_FEATURE_DIM) -> list[Instance]:
    """Stand-in for a trained single-agent detector.

    Each in-range object is detected with probability
    ``detect_base_prob * exp(-detect_range_decay * distance)``; its box gets
    Gaussian centre/yaw noise, its score drops linearly with the centre error
    and its feature is ``embed(id) * feature_scale + feature_offset`` plus
    noise. Poisson false positives carry low scores and random features.
    Output is sorted by descending score and truncated to ``query_cap``.
    """
    n = len(objects)
    keys = (frame, cfg.agent_id)
    vis_u = stream_rng(seed, "visibility", *keys).uniform(size=n)
    noise_rng = stream_rng(seed, "noise", *keys)
    loc = noise_rng.standard_normal((n, 2)) * cfg.loc_noise_sigma
    dyaw = noise_rng.standard_normal(n) * cfg.yaw_noise_sigma
    score_eps = noise_rng.standard_normal(n) * cfg.score_noise
    feat_noise_rng = stream_rng(seed, "feature-noise", *keys)

    found: list[tuple[float, OrientedBox3D, np.ndarray]] = []
    for k, obj in enumerate(objects):
        local = agent_frame_box(obj.box, cfg)
        if not cfg.in_range(local.cx, local.cy):
            continue
        dist = math.hypot(local.cx, local.cy)
        if vis_u[k] >= cfg.detect_base_prob * math.exp(-cfg.detect_range_decay * dist):
            continue
        if cfg.loc_noise_sigma > 0 or cfg.yaw_noise_sigma > 0:
            local = replace(local, cx=local.cx + loc[k, 0], cy=local.cy + loc[k, 1],
                            yaw=wrap_angle(local.yaw + dyaw[k]))
        err = math.hypot(loc[k, 0], loc[k, 1])
        score = float(np.clip(cfg.score_base - cfg.score_slope * err + score_eps[k], 0.01, 0.99))
        feat = embed(obj.id, d) * cfg.feature_scale + cfg.feature_offset
        if cfg.feature_noise_sigma > 0:
            feat = feat + feat_noise_rng.standard_normal(d) * cfg.feature_noise_sigma
        found.append((score, local, feat))

    fp_rng = stream_rng(seed, "false-positives", *keys)
    n_fp = int(fp_rng.poisson(cfg.false_positive_rate)) if cfg.false_positive_rate > 0 else 0
    for _ in range(n_fp):
        box = OrientedBox3D(
            fp_rng.uniform(-cfg.range_x, cfg.range_x), fp_rng.uniform(-cfg.range_y, cfg.range_y),
            fp_rng.uniform(3.5, 5.0), fp_rng.uniform(1.6, 2.1), fp_rng.uniform(-math.pi, math.pi),
            0.8, 1.6,
        )
        v = fp_rng.standard_normal(d)
        feat = v / np.linalg.norm(v) * cfg.feature_scale + cfg.feature_offset
        found.append((float(fp_rng.uniform(*cfg.fp_score_range)), box, feat))

    order = sorted(range(len(found)), key=lambda i: -found[i][0])[: cfg.query_cap]
    return [
        Instance(rank, cfg.agent_id, found[i][2], found[i][1], found[i][0], "agent")
        for rank, i in enumerate(order)
    ]


def synthesize_points(objects: Sequence[SceneObject], cfg: AgentConfig, density: float,
                      seed: int, frame: int = 0) -> PointCloud:
    """Uniform points inside every in-range object box, in the agent frame."""
    if density < 0:
        raise ValueError("density must be >= 0")
    rng = stream_rng(seed, "points", frame, cfg.agent_id)
    chunks = []
    for obj in objects:
        local = agent_frame_box(obj.box, cfg)
        if not cfg.in_range(local.cx, local.cy):
            continue
        count = int(rng.poisson(density * local.length * local.width)) if density > 0 else 0
        if count == 0:
            continue
        # shrink slightly so no point sits on a face shared with a neighbour
        u = (rng.uniform(-0.5, 0.5, size=(count, 3)) * 0.999) * [local.length, local.width, local.height]
        u[:, 2] += local.cz
        chunks.append(transform_points(Pose2D(local.cx, local.cy, local.yaw), u))
    pts = np.concatenate(chunks) if chunks else np.zeros((0, 3))
    return PointCloud(pts, "agent")


# ---- scene files ---------------------------------------------------------

def _box_to_json(box: OrientedBox3D) -> dict:
    return {"cx": box.cx, "cy": box.cy, "cz": box.cz, "length": box.length,
            "width": box.width, "height": box.height, "yaw": box.yaw}


def _agent_to_json(a: AgentConfig) -> dict:
    out = asdict(a)
    out["pose"] = {"x": a.pose.x, "y": a.pose.y, "yaw": a.pose.yaw}
    out["fp_score_range"] = list(a.fp_score_range)
    return out


_OVERRIDE_KEYS = ("agent_defaults", "ego_overrides", "collaborator_overrides")


def _layout_to_json(layout: Layout) -> dict:
    out = asdict(layout)
    for k in ("object_region", "length_range", "width_range", "height_range"):
        out[k] = list(out[k])
    for k in _OVERRIDE_KEYS:
        out[k] = {n: list(v) if isinstance(v, tuple) else v for n, v in out[k].items()}
    return out


def scene_to_json(scene: Scene) -> dict:
    objects = []
    for t, frame in enumerate(scene.frames):
        for obj in frame:
            objects.append({"frame": t, "id": obj.id, "class": obj.cls, **_box_to_json(obj.box)})
    return {
        "schema_version": SCENE_SCHEMA_VERSION,
        "seed": scene.seed,
        "frame_count": scene.frame_count,
        "layout": _layout_to_json(scene.layout),
        "agents": [_agent_to_json(a) for a in scene.agents],
        "objects": objects,
    }


def scene_schema() -> dict:
    return json.loads(resources.files("instfuse").joinpath("scene.schema.json").read_text())


def scene_from_json(doc: dict) -> Scene:
    import jsonschema

    jsonschema.validate(doc, scene_schema())
    agents = []
    for a in doc["agents"]:
        a = dict(a)
        p = a.pop("pose")
        a["pose"] = Pose2D(p["x"], p["y"], p["yaw"])
        a["fp_score_range"] = tuple(a["fp_score_range"])
        agents.append(AgentConfig(**a))
    frames: list[list[SceneObject]] = [[] for _ in range(doc["frame_count"])]
    for o in doc["objects"]:
        box = OrientedBox3D(o["cx"], o["cy"], o["length"], o["width"], o["yaw"], o["cz"], o["height"])
        frames[o["frame"]].append(SceneObject(o["id"], box, o["class"]))
    lay = dict(doc.get("layout", {}))
    for k in ("object_region", "length_range", "width_range", "height_range"):
        if k in lay:
            lay[k] = tuple(lay[k])
    for k in _OVERRIDE_KEYS:
        if k in lay:
            lay[k] = {n: tuple(v) if isinstance(v, list) else v for n, v in lay[k].items()}
    return Scene(doc["seed"], agents, frames, Layout(**lay))


def save_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scene_to_json(scene), indent=1, sort_keys=True) + "\n")


def load_scene(path: str | Path) -> Scene:
    return scene_from_json(json.loads(Path(path).read_text()))


# ---- presets ---------------------------------------------------------------

_PRESETS: dict[str, dict] = {
    # mixed-quality detectors, partial visibility
    "default": dict(
        agent_defaults=dict(detect_base_prob=0.95, detect_range_decay=0.006, loc_noise_sigma=0.2,
                            yaw_noise_sigma=0.03, score_noise=0.05, feature_noise_sigma=0.02,
                            false_positive_rate=2.0),
        collaborator_overrides=dict(feature_scale=10.8, feature_offset=0.05),
    ),
    # every visible object seen by both agents, centre noise 0.3 m
    "duplicate-noise": dict(
        object_region=(40.0, 25.0),
        agent_spread=15.0,
        agent_defaults=dict(loc_noise_sigma=0.3, yaw_noise_sigma=0.02, score_noise=0.05,
                            score_slope=0.3, feature_noise_sigma=0.02),
        collaborator_overrides=dict(feature_scale=10.8, feature_offset=0.05),
    ),
    "noiseless": dict(collaborator_overrides=dict(feature_scale=10.8, feature_offset=0.05)),
    # ~12 transmitted instances per frame, vehicle + roadside unit
    "dair": dict(
        count_mode="poisson",
        object_region=(40.0, 25.0),
        agent_spread=15.0,
        agent_defaults=dict(loc_noise_sigma=0.2, yaw_noise_sigma=0.03, score_noise=0.05,
                            feature_noise_sigma=0.02, false_positive_rate=2.0,
                            fp_score_range=(0.01, 0.09)),
        collaborator_overrides=dict(feature_scale=10.8, feature_offset=0.05, range_x=100.0, range_y=100.0),
    ),
}
_PRESETS["v2xset"] = dict(_PRESETS["dair"])

PRESET_NAMES = tuple(sorted(_PRESETS))


def preset_layout(name: str) -> Layout:
    try:
        return Layout(**_PRESETS[name])
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}") from None
