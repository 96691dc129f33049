"""IoU-aware classification loss and quality-aware instance filtering."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

from .geometry import Pose2D, transform_box
from .scenario import Instance

GRID_RESOLUTION = 0.1


@dataclass(frozen=True)
class MalParams:
    gamma: float = 1.0
    eps: float = 1e-7
    clamp: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise ValueError("gamma must be finite and >= 0")


@dataclass(frozen=True)
class FilterConfig:
    score_threshold: float = 0.1
    ego_range_x: float = 100.0
    ego_range_y: float = 40.0
    grid_resolution: float = GRID_RESOLUTION

    def __post_init__(self):
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError("score_threshold must lie in [0, 1]")


def _prep(p: float, q: float, params: MalParams) -> float:
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    if params.clamp:
        return min(max(p, params.eps), 1.0 - params.eps)
    if not params.eps <= p <= 1.0 - params.eps:
        raise ValueError(f"p={p} outside [{params.eps}, {1 - params.eps}] with clamping disabled")
    return p


def mal_loss(p: float, q: float, params: MalParams = MalParams()) -> float:
    """Matchability-aware loss for predicted probability ``p`` and IoU ``q``.

    Positives (q > 0) use a soft-target cross-entropy against ``q**gamma``;
    negatives use ``-p**gamma * log(1 - p)``.
    """
    p = _prep(p, q, params)
    g = params.gamma
    if q > 0:
        t = q ** g
        return -(t * math.log(p) + (1.0 - t) * math.log1p(-p))
    return -(p ** g) * math.log1p(-p)


def mal_grad(p: float, q: float, params: MalParams = MalParams()) -> float:
    """d mal_loss / d p."""
    p = _prep(p, q, params)
    g = params.gamma
    if q > 0:
        return (p - q ** g) / (p * (1.0 - p))
    dpow = g * p ** (g - 1.0) if g > 0 else 0.0
    return -dpow * math.log1p(-p) + p ** g / (1.0 - p)


def grid_cell(x: float, y: float, resolution: float = GRID_RESOLUTION) -> tuple[int, int]:
    return math.floor(x / resolution), math.floor(y / resolution)


def qaf_filter(instances: Sequence[Instance], xi_to_ego: Pose2D,
               cfg: FilterConfig = FilterConfig()) -> tuple[list[Instance], list[tuple[int, int, int]]]:
    """Keep confident instances that land inside the ego range.

    Returns the kept instances re-expressed in the ego frame (descending
    score, stable) and the sparse position map ``(instance_id, gx, gy)``.
    """
    kept = []
    for inst in instances:
        if inst.score < cfg.score_threshold:
            continue
        box = transform_box(xi_to_ego, inst.box)
        if abs(box.cx) > cfg.ego_range_x or abs(box.cy) > cfg.ego_range_y:
            continue
        kept.append(replace(inst, box=box, frame="ego"))
    kept.sort(key=lambda i: -i.score)
    pos = [(i.instance_id, *grid_cell(i.box.cx, i.box.cy, cfg.grid_resolution)) for i in kept]
    return kept, pos
