"""Planar poses, oriented boxes and rotated BEV IoU."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi
AREA_EPS = 1e-12


def wrap_angle(angle: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.remainder(angle, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    return a


@dataclass(frozen=True)
class Pose2D:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.yaw)


IDENTITY = Pose2D()


def compose(a: Pose2D, b: Pose2D) -> Pose2D:
    """Return the pose that applies ``b`` first, then ``a``."""
    c, s = math.cos(a.yaw), math.sin(a.yaw)
    return Pose2D(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.yaw + b.yaw,
    )


def inverse(p: Pose2D) -> Pose2D:
    c, s = math.cos(p.yaw), math.sin(p.yaw)
    return Pose2D(-(c * p.x + s * p.y), -(-s * p.x + c * p.y), -p.yaw)


def relative_pose(target: Pose2D, source: Pose2D) -> Pose2D:
    """Transform taking coordinates in ``source``'s frame into ``target``'s frame."""
    return compose(inverse(target), source)


def transform_points(xi: Pose2D, pts: np.ndarray) -> np.ndarray:
    """Apply ``xi`` to an (N, 2) or (N, 3) array; z passes through untouched."""
    pts = np.asarray(pts, dtype=np.float64)
    out = pts.copy()
    if pts.size == 0:
        return out
    c, s = math.cos(xi.yaw), math.sin(xi.yaw)
    out[:, 0] = c * pts[:, 0] - s * pts[:, 1] + xi.x
    out[:, 1] = s * pts[:, 0] + c * pts[:, 1] + xi.y
    return out


@dataclass(frozen=True)
class OrientedBoxBEV:
    cx: float
    cy: float
    length: float
    width: float
    yaw: float = 0.0

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError(f"box dims must be positive, got {self.length}x{self.width}")

    @property
    def area(self) -> float:
        return self.length * self.width

    def corners(self) -> np.ndarray:
        """Footprint corners, counter-clockwise, shape (4, 2)."""
        hl, hw = 0.5 * self.length, 0.5 * self.width
        local = np.array([[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])

    @property
    def bev(self) -> "OrientedBoxBEV":
        return self


@dataclass(frozen=True)
class OrientedBox3D(OrientedBoxBEV):
    cz: float = 0.0
    height: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        if not self.height > 0:
            raise ValueError(f"box height must be positive, got {self.height}")

    @property
    def bev(self) -> OrientedBoxBEV:
        return OrientedBoxBEV(self.cx, self.cy, self.length, self.width, self.yaw)

    def as_array(self) -> np.ndarray:
        """(cx, cy, cz, length, width, height, yaw)."""
        return np.array([self.cx, self.cy, self.cz, self.length, self.width, self.height, self.yaw])

    @classmethod
    def from_array(cls, v: Sequence[float]) -> "OrientedBox3D":
        cx, cy, cz, l, w, h, yaw = (float(t) for t in v)
        return cls(cx, cy, l, w, wrap_angle(yaw), cz, h)


def transform_box(xi: Pose2D, box: OrientedBoxBEV) -> OrientedBoxBEV:
    """Re-express ``box`` through the rigid transform ``xi``; dims and z are kept."""
    c, s = math.cos(xi.yaw), math.sin(xi.yaw)
    return replace(
        box,
        cx=c * box.cx - s * box.cy + xi.x,
        cy=s * box.cx + c * box.cy + xi.y,
        yaw=wrap_angle(box.yaw + xi.yaw),
    )


def circumradius(box: OrientedBoxBEV) -> float:
    return 0.5 * math.hypot(box.length, box.width)


def polygon_area(poly: Sequence[Sequence[float]]) -> float:
    """Signed shoelace area (positive for counter-clockwise)."""
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        acc += x1 * y2 - x2 * y1
    return 0.5 * acc


def clip_convex(subject: list, clipper: list) -> list:
    """Sutherland-Hodgman: clip ``subject`` by the convex CCW polygon ``clipper``."""
    out = list(subject)
    n = len(clipper)
    for i in range(n):
        if not out:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp, out = out, []
        prev = inp[-1]
        prev_side = ex * (prev[1] - ay) - ey * (prev[0] - ax)
        for cur in inp:
            cur_side = ex * (cur[1] - ay) - ey * (cur[0] - ax)
            if cur_side >= 0.0:
                if prev_side < 0.0:
                    out.append(_cross_point(prev, cur, prev_side, cur_side))
                out.append(cur)
            elif prev_side >= 0.0:
                out.append(_cross_point(prev, cur, prev_side, cur_side))
            prev, prev_side = cur, cur_side
    return out


def _cross_point(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def _canonical(a: OrientedBoxBEV, b: OrientedBoxBEV):
    ka = (a.cx, a.cy, a.length, a.width, a.yaw)
    kb = (b.cx, b.cy, b.length, b.width, b.yaw)
    return (a, b) if ka <= kb else (b, a)


def bev_intersection_area(a: OrientedBoxBEV, b: OrientedBoxBEV) -> float:
    a, b = _canonical(a, b)
    # circumcircles disjoint -> footprints disjoint
    reach = circumradius(a) + circumradius(b)
    dx, dy = a.cx - b.cx, a.cy - b.cy
    if dx * dx + dy * dy >= reach * reach:
        return 0.0
    poly = clip_convex([tuple(p) for p in a.corners()], [tuple(p) for p in b.corners()])
    return max(polygon_area(poly), 0.0)


def bev_iou(a: OrientedBoxBEV, b: OrientedBoxBEV) -> float:
    """Rotated IoU of the two BEV footprints.

    Intersections below 1e-12 m^2 count as exactly zero, as do boxes whose own
    area falls below that guard.
    """
    area_a, area_b = a.area, b.area
    if area_a < AREA_EPS or area_b < AREA_EPS:
        return 0.0
    inter = bev_intersection_area(a, b)
    if inter < AREA_EPS:
        return 0.0
    union = area_a + area_b - inter
    return min(max(inter / union, 0.0), 1.0)


def bev_iou_matrix(boxes_a: Sequence[OrientedBoxBEV], boxes_b: Sequence[OrientedBoxBEV]) -> np.ndarray:
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = bev_iou(a, b)
    return out


def points_in_box(pts: np.ndarray, box: OrientedBoxBEV, check_z: bool = True) -> np.ndarray:
    """Boolean mask of points inside ``box`` (3D if the box carries height)."""
    pts = np.asarray(pts, dtype=np.float64)
    if pts.size == 0:
        return np.zeros(len(pts), dtype=bool)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx, dy = pts[:, 0] - box.cx, pts[:, 1] - box.cy
    u = c * dx + s * dy
    v = -s * dx + c * dy
    mask = (np.abs(u) <= 0.5 * box.length) & (np.abs(v) <= 0.5 * box.width)
    if check_z and isinstance(box, OrientedBox3D) and pts.shape[1] > 2:
        mask &= np.abs(pts[:, 2] - box.cz) <= 0.5 * box.height
    return mask
