import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from instfuse.wire import (
    HEADER_SIZE,
    AgentMessage,
    LengthMismatch,
    MalformedHeader,
    VersionUnsupported,
    WireError,
    bandwidth_log2,
    decode,
    encode,
    late_fusion_bytes,
    read_msgdump,
    write_msgdump,
)


def make_msg(n, d=256, seed=0, sender=3, frame=9):
    r = np.random.default_rng(seed)
    return AgentMessage(sender, frame, r.standard_normal((n, d)), r.integers(-2000, 2000, (n, 2)),
                        r.uniform(0, 1, n))


def test_sizes():
    assert HEADER_SIZE == 13
    assert len(encode(make_msg(0))) == 13
    assert len(encode(make_msg(1))) - 13 == 1036


@given(st.integers(0, 20), st.integers(1, 64), st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1),
       st.integers(0, 2**31))
def test_round_trip(n, d, sender, frame, seed):
    msg = make_msg(n, d, seed, sender, frame)
    assert decode(encode(msg)) == msg
    assert encode(decode(encode(msg))) == encode(msg)


def test_special_floats_round_trip_bitwise():
    f = np.array([[np.nan, -0.0, np.inf, 1e-45]], dtype=np.float32)
    msg = AgentMessage(1, 2, f, [[0, 0]], [0.5])
    assert decode(encode(msg)).features.tobytes() == f.tobytes()


def test_distinct_errors():
    blob = encode(make_msg(2, 8))
    with pytest.raises(LengthMismatch):
        decode(blob[:-1])
    with pytest.raises(LengthMismatch):
        decode(blob + b"\0")
    with pytest.raises(VersionUnsupported):
        decode(b"\x02" + blob[1:])
    with pytest.raises(MalformedHeader):
        decode(blob[:5])
    for cls in (LengthMismatch, VersionUnsupported, MalformedHeader):
        assert issubclass(cls, WireError)
    assert len({LengthMismatch.code, VersionUnsupported.code, MalformedHeader.code}) == 3


def test_bandwidth_examples():
    rep = bandwidth_log2([make_msg(12)] * 3)
    assert rep.mean == 12288 and rep.log2_mean == pytest.approx(13.585, abs=5e-4)
    assert bandwidth_log2([make_msg(18)]).log2_mean == pytest.approx(14.17, abs=0.01)
    empty = bandwidth_log2([make_msg(0), make_msg(0)])
    assert empty.mean == 0 and math.isinf(empty.log2_mean) and empty.log2_text == "n/a"
    full = bandwidth_log2([make_msg(1)], "full-payload")
    assert full.mean == 13 + 1036
    with pytest.raises(ValueError):
        bandwidth_log2([])


def test_multi_message_frames():
    rep = bandwidth_log2([[make_msg(2), make_msg(3)], [make_msg(0)]])
    assert rep.per_frame_bytes == (5 * 1024, 0)
    assert rep.median == 2560 and rep.min == 0 and rep.max == 5120


def test_late_fusion_bytes():
    assert late_fusion_bytes(10) == 320
    assert math.log2(late_fusion_bytes(10)) == pytest.approx(8.32, abs=0.01)
    with pytest.raises(ValueError):
        late_fusion_bytes(-1)


def test_msgdump(tmp_path):
    msgs = [make_msg(k, 16, k) for k in range(4)]
    p = tmp_path / "m.msgdump"
    assert write_msgdump(p, msgs) == 4
    assert read_msgdump(p) == msgs
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(LengthMismatch):
        read_msgdump(p)


def test_invalid_message_shapes():
    with pytest.raises(ValueError):
        AgentMessage(0, 0, np.zeros((2, 4)), np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        AgentMessage(0, 0, np.zeros(4), np.zeros((1, 2)), np.zeros(1))
