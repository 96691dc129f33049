import math

import numpy as np
import pytest
from shapely.geometry import Polygon

from instfuse.geometry import OrientedBoxBEV


def random_box(rng, spread=3.0) -> OrientedBoxBEV:
    return OrientedBoxBEV(
        float(rng.uniform(-spread, spread)), float(rng.uniform(-spread, spread)),
        float(rng.uniform(0.3, 5.0)), float(rng.uniform(0.3, 5.0)),
        float(rng.uniform(-math.pi, math.pi)),
    )


def shapely_iou(a: OrientedBoxBEV, b: OrientedBoxBEV) -> float:
    """Exact polygon-clipping oracle, independent of the package's clipper."""
    pa, pb = Polygon(a.corners()), Polygon(b.corners())
    inter = pa.intersection(pb).area
    return inter / (pa.area + pb.area - inter)


def monte_carlo_iou(a: OrientedBoxBEV, b: OrientedBoxBEV, rng, n=1_000_000) -> float:
    pts = np.vstack([a.corners(), b.corners()])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    samples = rng.uniform(lo, hi, size=(n, 2))

    def inside(box):
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        dx, dy = samples[:, 0] - box.cx, samples[:, 1] - box.cy
        return (np.abs(c * dx + s * dy) <= box.length / 2) & (np.abs(-s * dx + c * dy) <= box.width / 2)

    ia, ib = inside(a), inside(b)
    union = np.count_nonzero(ia | ib)
    return np.count_nonzero(ia & ib) / union if union else 0.0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
