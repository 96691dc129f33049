"""Cross-agent local instance fusion.

Cooperative instances get a spatial and an agent position encoding, pass a
self-attention block that pulls same-object features from different agents
together (cross-domain adaptation), then a second attention block whose
logits carry the additive bias ``log W`` with
``W[k, v] = exp(-|c_k - c_v| / (beta * r_k**2))`` (Gaussian distance
attention). Projections are identity in ``analytic`` mode or read from a
weights file in ``loaded`` mode.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import OrientedBox3D, OrientedBoxBEV, circumradius
from .scenario import Instance
from .wire import LengthMismatch, MalformedHeader, VersionUnsupported

WEIGHTS_MAGIC = b"CFW1"
WEIGHT_ORDER = ("cda_q", "cda_k", "cda_v", "gda_q", "gda_k", "gda_v")


class FusionConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AttentionConfig:
    d: int = 256
    beta: float = 1.0
    mode: str = "analytic"
    residual: bool | None = None
    pe_scale: float = 1.0
    weights: dict | None = None

    def __post_init__(self):
        if self.beta <= 0:
            raise FusionConfigError("beta must be > 0")
        if self.mode not in ("analytic", "loaded"):
            raise FusionConfigError(f"mode must be 'analytic' or 'loaded', got {self.mode!r}")
        if self.mode == "loaded":
            if self.weights is None:
                raise FusionConfigError("loaded mode needs projection weights")
            for name in WEIGHT_ORDER:
                w = self.weights.get(name)
                if w is None or np.shape(w) != (self.d, self.d):
                    raise FusionConfigError(f"weight {name} must be {self.d}x{self.d}")

    @property
    def use_residual(self) -> bool:
        return self.mode == "loaded" if self.residual is None else self.residual

    def projections(self, block: str):
        if self.mode == "analytic":
            return None, None, None
        return tuple(np.asarray(self.weights[f"{block}_{t}"], dtype=np.float64) for t in "qkv")


# ---- position encodings -----------------------------------------------------

def _sinusoid(pos: float, dims: int) -> np.ndarray:
    """Interleaved sin/cos of ``pos`` at geometric frequencies from 1 down to 1e-4."""
    n = dims // 2
    freqs = 1e4 ** (-np.arange(n) / max(n - 1, 1)) if n > 1 else np.ones(1)
    out = np.empty(2 * n)
    out[0::2] = np.sin(pos * freqs)
    out[1::2] = np.cos(pos * freqs)
    return out


def spatial_pe(grid_entry: tuple[int, int], d: int = 256) -> np.ndarray:
    if d % 4 != 0:
        raise FusionConfigError(f"spatial encoding needs d divisible by 4, got {d}")
    gx, gy = grid_entry
    return np.concatenate([_sinusoid(gx, d // 2), _sinusoid(gy, d // 2)])


def agent_pe(agent_rank: int, d: int = 256) -> np.ndarray:
    if agent_rank < 0:
        raise ValueError("agent rank must be >= 0")
    if d % 2 != 0:
        raise FusionConfigError(f"agent encoding needs even d, got {d}")
    return _sinusoid(agent_rank, d)


def encode_inputs(features: np.ndarray, grid: Sequence[tuple[int, int]], ranks: Sequence[int],
                  cfg: AttentionConfig) -> np.ndarray:
    """feature + pe_scale * (spatial_pe + agent_pe), row-wise."""
    x = np.array(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.d:
        raise FusionConfigError(f"features must be (n, {cfg.d})")
    if cfg.pe_scale:
        for k in range(len(x)):
            x[k] += cfg.pe_scale * (spatial_pe(tuple(grid[k]), cfg.d) + agent_pe(int(ranks[k]), cfg.d))
    return x


# ---- attention ----------------------------------------------------------------

def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _project(x, wq, wk, wv):
    if wq is None:
        return x, x, x
    return x @ wq, x @ wk, x @ wv


def attend(x: np.ndarray, projections=(None, None, None), bias: np.ndarray | None = None,
           residual: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Single-head self-attention. Returns (output, attention weights)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("attention needs a non-empty (n, d) input")
    q, k, v = _project(x, *projections)
    logits = q @ k.T / math.sqrt(x.shape[1])
    if bias is not None:
        logits = logits + bias
    a = softmax_rows(logits)
    out = a @ v
    if residual:
        out = out + x
    return out, a


def attention_jacobian(x: np.ndarray, j: int, projections=(None, None, None),
                       bias: np.ndarray | None = None, residual: bool = False) -> np.ndarray:
    """d output_i / d x_j for every row i; shape (n, d, d) as [i, out_dim, in_dim]."""
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    wq, wk, wv = projections
    eye = np.eye(d)
    wq = eye if wq is None else np.asarray(wq, dtype=np.float64)
    wk = eye if wk is None else np.asarray(wk, dtype=np.float64)
    wv = eye if wv is None else np.asarray(wv, dtype=np.float64)
    q, k, v = x @ wq, x @ wk, x @ wv
    _, a = attend(x, (wq, wk, wv), bias)
    scale = 1.0 / math.sqrt(d)
    jac = np.zeros((n, d, d))
    for i in range(n):
        # g[m] = d logit_{i,m} / d x_j
        g = np.zeros((n, d))
        if i == j:
            g += (wq @ k.T).T * scale
        g[j] += (wk @ q[i]) * scale
        gbar = a[i] @ g
        jac[i] = (v.T * a[i]) @ (g - gbar)
        jac[i] += a[i, j] * wv.T
        if residual and i == j:
            jac[i] += eye
    return jac


def cda_forward(x: np.ndarray, cfg: AttentionConfig) -> tuple[np.ndarray, np.ndarray]:
    """Cross-domain adaptation: plain self-attention over encoded coop rows."""
    return attend(x, cfg.projections("cda"), None, cfg.use_residual)


def centers(boxes: Sequence[OrientedBoxBEV]) -> np.ndarray:
    return np.array([[b.cx, b.cy] for b in boxes], dtype=np.float64).reshape(-1, 2)


def gaussian_log_weights(boxes: Sequence[OrientedBoxBEV], beta: float = 1.0) -> np.ndarray:
    """log W computed directly, so far pairs keep a finite bias."""
    if beta <= 0:
        raise FusionConfigError("beta must be > 0")
    c = centers(boxes)
    r = np.array([circumradius(b) for b in boxes])
    if np.any(r * r < 1e-12):
        raise ValueError("degenerate box: zero circumradius")
    dist = np.sqrt(((c[:, None, :] - c[None, :, :]) ** 2).sum(-1))
    return -dist / (beta * r[:, None] ** 2)


def gaussian_weights(boxes: Sequence[OrientedBoxBEV], beta: float = 1.0) -> np.ndarray:
    return np.exp(gaussian_log_weights(boxes, beta))


def gda_forward(x: np.ndarray, boxes: Sequence[OrientedBoxBEV],
                cfg: AttentionConfig) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian distance attention over adapted features."""
    if len(boxes) != len(x):
        raise ValueError("one box per adapted feature required")
    return attend(x, cfg.projections("gda"), gaussian_log_weights(boxes, cfg.beta), cfg.use_residual)


def gda_jacobian(x: np.ndarray, boxes: Sequence[OrientedBoxBEV], cfg: AttentionConfig, j: int) -> np.ndarray:
    return attention_jacobian(x, j, cfg.projections("gda"), gaussian_log_weights(boxes, cfg.beta),
                              cfg.use_residual)


# ---- box read-out -------------------------------------------------------------

def fuse_boxes(weights: np.ndarray, boxes: Sequence[OrientedBox3D]) -> list[OrientedBox3D]:
    """Attention-weighted box mean; yaw via the mean of unit direction vectors."""
    arr = np.array([b.as_array() for b in boxes])
    lin = weights @ arr[:, :6]
    yaw = np.arctan2(weights @ np.sin(arr[:, 6]), weights @ np.cos(arr[:, 6]))
    return [OrientedBox3D.from_array([*row, th]) for row, th in zip(lin, yaw)]


@dataclass
class CalifResult:
    final: list[Instance]
    fused: list[Instance]
    cda_attention: np.ndarray | None = None
    gda_attention: np.ndarray | None = None


def calif(coop: Sequence[Instance], single: Sequence[Instance], grid: Sequence[tuple[int, int]],
          ranks: Sequence[int], cfg: AttentionConfig = AttentionConfig()) -> CalifResult:
    """Fuse the cooperative branch and append the untouched single branch.

    ``grid`` and ``ranks`` give each coop instance's position-map cell and its
    agent rank (ego 0, collaborators in arrival order).
    """
    if not coop:
        return CalifResult(list(single), [])
    x = encode_inputs(np.stack([c.feature for c in coop]), grid, ranks, cfg)
    adapted, a_cda = cda_forward(x, cfg)
    boxes = [c.box for c in coop]
    fused_feat, a_gda = gda_forward(adapted, boxes, cfg)
    fused_boxes = fuse_boxes(a_gda, boxes)
    fused_scores = a_gda @ np.array([c.score for c in coop])
    fused = [
        replace(c, feature=fused_feat[k], box=fused_boxes[k], score=float(np.clip(fused_scores[k], 0.0, 1.0)))
        for k, c in enumerate(coop)
    ]
    return CalifResult(fused + list(single), fused, a_cda, a_gda)


# ---- weights file ---------------------------------------------------------------

def save_weights(path: str | Path, weights: dict, d: int) -> None:
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", d))
        for name in WEIGHT_ORDER:
            w = np.asarray(weights[name], dtype="<f4")
            if w.shape != (d, d):
                raise FusionConfigError(f"weight {name} must be {d}x{d}")
            fh.write(w.tobytes())


def load_weights(path: str | Path) -> tuple[int, dict]:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise MalformedHeader("weights file shorter than its header")
    if data[:4] != WEIGHTS_MAGIC:
        raise VersionUnsupported(f"bad weights magic {data[:4]!r}")
    (d,) = struct.unpack_from("<I", data, 4)
    expected = 8 + 6 * d * d * 4
    if d == 0 or len(data) != expected:
        raise LengthMismatch(f"expected {expected} bytes for d={d}, got {len(data)}")
    mats = np.frombuffer(data, dtype="<f4", offset=8).reshape(6, d, d)
    return d, {name: mats[i].astype(np.float64) for i, name in enumerate(WEIGHT_ORDER)}
