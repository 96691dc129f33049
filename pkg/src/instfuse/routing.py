"""Split the concatenated instance table into single and cooperative branches."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import bev_iou
from .scenario import Instance


@dataclass(frozen=True)
class RoutingConfig:
    lam: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0 + 1e-9:
            raise ValueError("lambda must lie in [0, 1]")


@dataclass
class RoutedSets:
    single: list[Instance] = field(default_factory=list)
    coop: list[Instance] = field(default_factory=list)
    single_idx: list[int] = field(default_factory=list)
    coop_idx: list[int] = field(default_factory=list)


def build_iou_matrix(table: Sequence[Instance]) -> np.ndarray:
    """Pairwise BEV IoU with a zeroed diagonal."""
    n = len(table)
    m = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            m[i, j] = m[j, i] = bev_iou(table[i].box, table[j].box)
    return m


def route(table: Sequence[Instance], cfg: RoutingConfig = RoutingConfig(),
          iou: np.ndarray | None = None) -> RoutedSets:
    """An instance is single iff every IoU with another instance is below lambda."""
    if iou is None:
        iou = build_iou_matrix(table)
    best = iou.max(axis=1) if len(table) else np.zeros(0)
    out = RoutedSets()
    for k, inst in enumerate(table):
        if best[k] < cfg.lam:
            out.single.append(inst)
            out.single_idx.append(k)
        else:
            out.coop.append(inst)
            out.coop_idx.append(k)
    return out
