"""Binary message codec and byte accounting for transmitted instances.

Layout (little-endian)::

    header   u8 protocol_version | u32 sender_id | u32 frame_id
             | u16 feature_dim | u16 instance_count            (13 bytes)
    record   f32[feature_dim] feature | i32 grid_x | i32 grid_y | f32 score

A ``.msgdump`` file is a concatenation of ``u32 length`` + encoded message.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PROTOCOL_VERSION = 1
HEADER = struct.Struct("<BIIHH")
HEADER_SIZE = HEADER.size
LATE_BOX_BYTES = 32  # 7 box floats + score, 32-bit each


class WireError(ValueError):
    code = "wire-error"

    def __init__(self, detail: str = ""):
        super().__init__(f"{self.code}: {detail}" if detail else self.code)


class MalformedHeader(WireError):
    code = "malformed-header"


class LengthMismatch(WireError):
    code = "length-mismatch"


class VersionUnsupported(WireError):
    code = "version-unsupported"


def record_dtype(d: int) -> np.dtype:
    return np.dtype([("feature", "<f4", (d,)), ("grid", "<i4", (2,)), ("score", "<f4")])


def record_size(d: int) -> int:
    return 4 * d + 12


@dataclass(frozen=True, eq=False)
class AgentMessage:
    sender_id: int
    frame_id: int
    features: np.ndarray  # (n, d) float32
    grid: np.ndarray  # (n, 2) int32
    scores: np.ndarray  # (n,) float32
    protocol_version: int = PROTOCOL_VERSION

    def __post_init__(self):
        f = np.ascontiguousarray(self.features, dtype="<f4")
        if f.ndim != 2:
            raise ValueError("features must be a 2-D array (instances x feature_dim)")
        g = np.ascontiguousarray(self.grid, dtype="<i4").reshape(-1, 2)
        s = np.ascontiguousarray(self.scores, dtype="<f4").reshape(-1)
        if not (len(f) == len(g) == len(s)):
            raise ValueError("features, grid and scores disagree on instance count")
        if f.shape[1] < 1 or f.shape[1] > 0xFFFF or len(f) > 0xFFFF:
            raise ValueError("feature_dim and instance_count must fit in u16 (feature_dim >= 1)")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "scores", s)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def instance_count(self) -> int:
        return len(self.features)

    def __eq__(self, other):
        if not isinstance(other, AgentMessage):
            return NotImplemented
        return (
            (self.protocol_version, self.sender_id, self.frame_id, self.features.shape)
            == (other.protocol_version, other.sender_id, other.frame_id, other.features.shape)
            and self.features.tobytes() == other.features.tobytes()
            and self.grid.tobytes() == other.grid.tobytes()
            and self.scores.tobytes() == other.scores.tobytes()
        )

    __hash__ = None

    def payload_bytes(self) -> int:
        return self.instance_count * record_size(self.feature_dim)

    def feature_bytes(self) -> int:
        return self.instance_count * 4 * self.feature_dim


def encode(msg: AgentMessage) -> bytes:
    d, n = msg.feature_dim, msg.instance_count
    rec = np.empty(n, dtype=record_dtype(d))
    rec["feature"] = msg.features
    rec["grid"] = msg.grid
    rec["score"] = msg.scores
    header = HEADER.pack(msg.protocol_version, msg.sender_id, msg.frame_id, d, n)
    return header + rec.tobytes()


def decode(data: bytes) -> AgentMessage:
    if len(data) < HEADER_SIZE:
        raise MalformedHeader(f"need {HEADER_SIZE} header bytes, got {len(data)}")
    version, sender, frame, d, n = HEADER.unpack_from(data)
    if version != PROTOCOL_VERSION:
        raise VersionUnsupported(f"protocol version {version}, expected {PROTOCOL_VERSION}")
    if d == 0:
        raise MalformedHeader("feature_dim is zero")
    expected = n * record_size(d)
    got = len(data) - HEADER_SIZE
    if got != expected:
        raise LengthMismatch(f"header announces {expected} payload bytes, got {got}")
    rec = np.frombuffer(data, dtype=record_dtype(d), count=n, offset=HEADER_SIZE)
    return AgentMessage(sender, frame, rec["feature"].reshape(n, d).copy(),
                        rec["grid"].copy(), rec["score"].copy(), version)


def write_msgdump(path: str | Path, messages: Iterable[AgentMessage]) -> int:
    count = 0
    with open(path, "wb") as fh:
        for msg in messages:
            blob = encode(msg)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            count += 1
    return count


def read_msgdump(path: str | Path) -> list[AgentMessage]:
    data = Path(path).read_bytes()
    out, pos = [], 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise LengthMismatch("truncated length prefix")
        (size,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + size > len(data):
            raise LengthMismatch(f"record announces {size} bytes, {len(data) - pos} remain")
        out.append(decode(data[pos:pos + size]))
        pos += size
    return out


# ---- bandwidth accounting -------------------------------------------------

@dataclass(frozen=True)
class BandwidthReport:
    per_frame_bytes: tuple[int, ...]
    accounting: str
    mean: float
    median: float
    min: int
    max: int
    variance: float
    log2_mean: float

    @property
    def log2_text(self) -> str:
        return "n/a" if math.isinf(self.log2_mean) else f"{self.log2_mean:.2f}"

    def kb_stats(self) -> dict:
        kb = np.asarray(self.per_frame_bytes, dtype=float) / 1024.0
        return {"mean": float(kb.mean()), "median": float(np.median(kb)), "min": float(kb.min()),
                "max": float(kb.max()), "variance": float(kb.var())}

    def to_dict(self) -> dict:
        return {
            "accounting": self.accounting,
            "frames": len(self.per_frame_bytes),
            "mean_bytes": self.mean,
            "median_bytes": self.median,
            "min_bytes": self.min,
            "max_bytes": self.max,
            "variance_bytes2": self.variance,
            "log2_mean_bytes": None if math.isinf(self.log2_mean) else self.log2_mean,
            "log2_text": self.log2_text,
            "kb": self.kb_stats(),
        }


def message_bytes(msg: AgentMessage, accounting: str = "feature-only") -> int:
    if accounting == "feature-only":
        return msg.feature_bytes()
    if accounting == "full-payload":
        return HEADER_SIZE + msg.payload_bytes()
    raise ValueError(f"unknown accounting {accounting!r}")


def report_from_bytes(per_frame: Sequence[int], accounting: str) -> BandwidthReport:
    if len(per_frame) == 0:
        raise ValueError("bandwidth report needs at least one frame")
    arr = np.asarray(per_frame, dtype=np.int64)
    mean = float(arr.mean())
    return BandwidthReport(
        per_frame_bytes=tuple(int(b) for b in arr),
        accounting=accounting,
        mean=mean,
        median=float(np.median(arr)),
        min=int(arr.min()),
        max=int(arr.max()),
        variance=float(arr.var()),
        log2_mean=math.log2(mean) if mean > 0 else -math.inf,
    )


def bandwidth_log2(frames: Sequence[AgentMessage | Sequence[AgentMessage]],
                   accounting: str = "feature-only") -> BandwidthReport:
    """Per-frame byte statistics; a frame is one message or a list of them."""
    if len(frames) == 0:
        raise ValueError("bandwidth_log2 needs at least one frame")
    per_frame = []
    for frame in frames:
        msgs = [frame] if isinstance(frame, AgentMessage) else list(frame)
        per_frame.append(sum(message_bytes(m, accounting) for m in msgs))
    return report_from_bytes(per_frame, accounting)


def late_fusion_bytes(box_count: int) -> int:
    if box_count < 0:
        raise ValueError("box_count must be >= 0")
    return box_count * LATE_BOX_BYTES
