"""Cooperative ground-truth sampling.

An object database is cropped from every agent's labelled clouds, samples
are placed in the ego frame without touching each other or existing labels,
and every agent receives the samples it can see, in its own frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .geometry import (
    AREA_EPS,
    OrientedBox3D,
    Pose2D,
    bev_intersection_area,
    inverse,
    points_in_box,
    transform_box,
    transform_points,
)
from .scenario import stream_rng


@dataclass(frozen=True)
class DbEntry:
    points: np.ndarray  # object-local frame
    label: OrientedBox3D  # centred, yaw 0
    ground_z: float = 0.0  # original label centre height


@dataclass
class ObjectDb:
    entries: list[DbEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class PlacedSample:
    entry: int
    box: OrientedBox3D  # ego frame
    points: np.ndarray  # ego frame


@dataclass(frozen=True)
class AgentView:
    points: np.ndarray  # agent frame
    labels: list[OrientedBox3D]  # agent frame
    pose: Pose2D  # T_{e<-a}: agent frame -> ego frame
    range_x: float = 100.0
    range_y: float = 40.0


@dataclass
class AugResult:
    points: list[np.ndarray]
    labels: list[list[OrientedBox3D]]
    inserted: list[list[int]]  # indices into ``placed`` per agent


def _to_local(points: np.ndarray, label: OrientedBox3D) -> np.ndarray:
    local = transform_points(inverse(Pose2D(label.cx, label.cy, label.yaw)), points)
    local[:, 2] -= label.cz
    return local


def _to_pose(points: np.ndarray, box: OrientedBox3D) -> np.ndarray:
    out = transform_points(Pose2D(box.cx, box.cy, box.yaw), points)
    out[:, 2] += box.cz
    return out


def build_db(scenes: Sequence[tuple[np.ndarray, Sequence[OrientedBox3D]]]) -> ObjectDb:
    """Crop every label's interior points into an object-centred entry."""
    db = ObjectDb()
    for points, labels in scenes:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        for lab in labels:
            inside = pts[points_in_box(pts, lab)]
            canon = OrientedBox3D(0.0, 0.0, lab.length, lab.width, 0.0, 0.0, lab.height)
            db.entries.append(DbEntry(_to_local(inside, lab), canon, lab.cz))
    return db


def _clear(box, others) -> bool:
    return all(bev_intersection_area(box, o) < AREA_EPS for o in others)


def sample_nonoverlapping(db: ObjectDb, existing_gt: Sequence[OrientedBox3D], n: int,
                          region: tuple[float, float, float, float], seed: int,
                          attempts_per_sample: int = 100) -> list[PlacedSample]:
    """Draw up to ``n`` database objects into ``region`` = (xmin, xmax, ymin, ymax).

    Every placed box has zero BEV overlap with ``existing_gt`` and with the
    other placed boxes. Returns fewer than ``n`` once the attempt budget
    (``attempts_per_sample * n``) is spent.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0 or len(db) == 0:
        return []
    rng = stream_rng(seed, "cogt-sample")
    xmin, xmax, ymin, ymax = region
    placed: list[PlacedSample] = []
    taken = list(existing_gt)
    for _ in range(attempts_per_sample * n):
        if len(placed) == n:
            break
        idx = int(rng.integers(len(db)))
        entry = db.entries[idx]
        box = replace(entry.label, cx=float(rng.uniform(xmin, xmax)), cy=float(rng.uniform(ymin, ymax)),
                      yaw=float(rng.uniform(-math.pi, math.pi)), cz=entry.ground_z)
        if not _clear(box, taken):
            continue
        taken.append(box)
        placed.append(PlacedSample(idx, box, _to_pose(entry.points, box)))
    return placed


def synchronize(placed: Sequence[PlacedSample], agents: Sequence[AgentView]) -> AugResult:
    """Insert each visible sample into every agent's cloud and labels.

    Each agent's data goes to the ego frame, is merged with the samples whose
    centre lies inside that agent's range, and is brought back to the agent
    frame with the inverse transform.
    """
    result = AugResult([], [], [])
    for view in agents:
        to_agent = inverse(view.pose)
        pts_e = transform_points(view.pose, np.asarray(view.points, dtype=np.float64).reshape(-1, 3))
        labels_e = [transform_box(view.pose, b) for b in view.labels]
        chosen = []
        for s_idx, sample in enumerate(placed):
            local = transform_box(to_agent, sample.box)
            if abs(local.cx) <= view.range_x and abs(local.cy) <= view.range_y:
                chosen.append(s_idx)
        merged_pts = np.concatenate([pts_e, *(placed[i].points for i in chosen)]) if chosen else pts_e
        merged_labels = labels_e + [placed[i].box for i in chosen]
        result.points.append(transform_points(to_agent, merged_pts))
        result.labels.append([transform_box(to_agent, b) for b in merged_labels])
        result.inserted.append(chosen)
    return result
