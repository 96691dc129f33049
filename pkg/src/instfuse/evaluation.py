"""Matching, suppression, average precision and pose-noise injection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import OrientedBoxBEV, Pose2D, bev_iou
from .scenario import stream_rng
from .wire import BandwidthReport


# ---- assignment ------------------------------------------------------------

def _optimal_total(cost: np.ndarray) -> float:
    if cost.size == 0:
        return 0.0
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].sum())


def hungarian(cost) -> list[tuple[int, int]]:
    """Minimum-cost assignment of ``min(n, m)`` pairs.

    Among equally cheap assignments the lexicographically smallest column
    sequence (row-major) is returned.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost entries must be finite")
    n, m = cost.shape
    if n == 0 or m == 0:
        return []
    if n > m:
        return sorted((r, c) for c, r in hungarian(cost.T))

    total = _optimal_total(cost)
    tol = 1e-9 * max(1.0, float(np.abs(cost).max()) * n)
    pairs: list[tuple[int, int]] = []
    rows = list(range(n))
    cols = list(range(m))
    acc = 0.0
    for r in range(n):
        sub_rows = rows[r + 1:]
        for c in cols:
            rest_cols = [x for x in cols if x != c]
            rest = _optimal_total(cost[np.ix_(sub_rows, rest_cols)]) if sub_rows else 0.0
            if acc + cost[r, c] + rest <= total + tol:
                pairs.append((r, c))
                acc += cost[r, c]
                cols = rest_cols
                break
    return pairs


def assignment_cost(cost, pairs) -> float:
    cost = np.asarray(cost, dtype=np.float64)
    return float(sum(cost[r, c] for r, c in pairs))


# ---- NMS --------------------------------------------------------------------

def nms(boxes: Sequence[OrientedBoxBEV], scores: Sequence[float], iou_thr: float) -> list[int]:
    """Greedy rotated NMS; returns kept indices in descending-score order."""
    if not 0.0 <= iou_thr <= 1.0:
        raise ValueError("iou_thr must lie in [0, 1]")
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept: list[int] = []
    for i in order:
        if all(bev_iou(boxes[i], boxes[k]) < iou_thr for k in kept):
            kept.append(i)
    return kept


# ---- average precision ---------------------------------------------------------

def match_frame(det_boxes: Sequence[OrientedBoxBEV], det_scores: Sequence[float],
                gt_boxes: Sequence[OrientedBoxBEV], iou_thr: float) -> list[tuple[float, bool]]:
    """Greedy score-ordered matching; returns (score, is_tp) per detection in input order."""
    order = sorted(range(len(det_boxes)), key=lambda i: (-det_scores[i], i))
    used = [False] * len(gt_boxes)
    flags = [False] * len(det_boxes)
    for i in order:
        best, best_iou = -1, iou_thr
        for g, gt in enumerate(gt_boxes):
            if used[g]:
                continue
            iou = bev_iou(det_boxes[i], gt)
            if iou >= best_iou and (best < 0 or iou > best_iou):
                best, best_iou = g, iou
        if best >= 0:
            used[best] = True
            flags[i] = True
    return [(float(det_scores[i]), flags[i]) for i in range(len(det_boxes))]


def ap_from_matches(matches: Sequence[tuple[float, bool]], n_gt: int) -> float:
    """All-point interpolated AP from pooled (score, is_tp) pairs.

    Pooled order is descending score, ties kept in the order given.
    """
    if n_gt == 0:
        return 1.0 if len(matches) == 0 else 0.0
    if not matches:
        return 0.0
    order = sorted(range(len(matches)), key=lambda i: -matches[i][0])
    tp = np.array([matches[i][1] for i in order], dtype=float)
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(tp) + 1)
    recall = ctp / n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_r) * envelope))


def average_precision(det_boxes, det_scores, gt_boxes, iou_thr: float) -> float:
    return ap_from_matches(match_frame(det_boxes, det_scores, gt_boxes, iou_thr), len(gt_boxes))


def average_precision_frames(frames: Sequence[tuple], iou_thr: float) -> float:
    """AP over several frames of ``(det_boxes, det_scores, gt_boxes)``."""
    pooled: list[tuple[float, bool]] = []
    n_gt = 0
    for det_boxes, det_scores, gt_boxes in frames:
        pooled.extend(match_frame(det_boxes, det_scores, gt_boxes, iou_thr))
        n_gt += len(gt_boxes)
    return ap_from_matches(pooled, n_gt)


# ---- pose noise -----------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    sigma_t: float = 0.0  # metres
    sigma_r: float = 0.0  # degrees

    def __post_init__(self):
        if self.sigma_t < 0 or self.sigma_r < 0:
            raise ValueError("noise sigmas must be >= 0")

    @property
    def label(self) -> str:
        return f"{self.sigma_t:.1f}/{self.sigma_r:.1f}"

    @classmethod
    def parse(cls, text: str) -> "NoiseSpec":
        """``"0.2"`` (diagonal) or ``"0.2/0.4"`` (metres/degrees)."""
        parts = text.strip().split("/")
        if len(parts) == 1:
            v = float(parts[0])
            return cls(v, v)
        if len(parts) == 2:
            return cls(float(parts[0]), float(parts[1]))
        raise ValueError(f"bad noise level {text!r}")


DEFAULT_NOISE_GRID = tuple(NoiseSpec(s, s) for s in (0.0, 0.1, 0.2, 0.3, 0.4))


def inject_pose_noise(poses: Sequence[Pose2D], spec: NoiseSpec, seed: int, frame: int = 0) -> list[Pose2D]:
    """Gaussian x/y/yaw perturbation of every pose except the ego (index 0)."""
    poses = list(poses)
    if spec.sigma_t == 0 and spec.sigma_r == 0:
        return poses
    rng = stream_rng(seed, "pose-noise", frame)
    noise = rng.standard_normal((len(poses), 3))
    sig_yaw = math.radians(spec.sigma_r)
    out = poses[:1]
    for k in range(1, len(poses)):
        p = poses[k]
        out.append(Pose2D(p.x + noise[k, 0] * spec.sigma_t, p.y + noise[k, 1] * spec.sigma_t,
                          p.yaw + noise[k, 2] * sig_yaw))
    return out


# ---- report -----------------------------------------------------------------------

@dataclass
class StrategyRow:
    strategy: str
    noise: NoiseSpec
    ap50: float
    ap70: float
    bandwidth: BandwidthReport
    frames: int

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "noise": {"sigma_t_m": self.noise.sigma_t, "sigma_r_deg": self.noise.sigma_r},
            "ap50": self.ap50,
            "ap70": self.ap70,
            "frames": self.frames,
            "bandwidth": self.bandwidth.to_dict(),
        }


@dataclass
class EvalReport:
    rows: list[StrategyRow] = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def row(self, strategy: str, noise: NoiseSpec | None = None) -> StrategyRow:
        for r in self.rows:
            if r.strategy == strategy and (noise is None or r.noise == noise):
                return r
        raise KeyError(strategy)

    def to_dict(self) -> dict:
        return {"settings": self.settings, "rows": [r.to_dict() for r in self.rows]}
