import numpy as np
import pytest
from hypothesis import given, strategies as st

from instfuse.geometry import OrientedBox3D
from instfuse.routing import RoutingConfig, build_iou_matrix, route
from instfuse.scenario import Instance


def inst(i, x, y=0.0, yaw=0.0, size=2.0):
    return Instance(i, 0, np.full(4, float(i)), OrientedBox3D(x, y, size, size, yaw), 0.5, "ego")


def test_matrix_examples():
    assert build_iou_matrix([inst(0, 0)]).tolist() == [[0.0]]
    m = build_iou_matrix([inst(0, 0), inst(1, 0)])
    assert m[0, 1] == 1.0 and m[0, 0] == 0.0
    m = build_iou_matrix([inst(0, 0), inst(1, 1), inst(2, 20)])
    assert m[0, 1] == pytest.approx(1 / 3)
    assert m[:, 2].sum() == 0 and m[2].sum() == 0


def test_route_examples():
    a, a2, b = inst(0, 0), inst(1, 1), inst(2, 20)
    r = route([a, a2, b])
    assert r.coop == [a, a2] and r.single == [b]
    assert route([a]).single == [a]
    assert route([a, inst(1, 0)]).coop_idx == [0, 1]


def test_lambda_edges():
    a, a2, b = inst(0, 0), inst(1, 1), inst(2, 20)
    assert route([a, a2, b], RoutingConfig(0.0)).single == []
    assert route([a, a2, b], RoutingConfig(1.0 + 1e-9)).coop == []
    # exactly at lambda goes to coop (strict "below")
    assert route([a, a2], RoutingConfig(lam=1 / 3), iou=np.array([[0, 1 / 3], [1 / 3, 0]])).coop_idx == [0, 1]
    with pytest.raises(ValueError):
        RoutingConfig(-0.1)


table_rows = st.lists(st.tuples(st.floats(-15, 15), st.floats(-15, 15), st.floats(-3.2, 3.2)),
                      max_size=50)


@given(table_rows)
def test_partition_and_reciprocity(rows):
    table = [inst(k, x, y, yaw) for k, (x, y, yaw) in enumerate(rows)]
    r = route(table)
    assert sorted(r.single_idx + r.coop_idx) == list(range(len(table)))
    assert len(set(r.single_idx) & set(r.coop_idx)) == 0
    assert r.single_idx == sorted(r.single_idx) and r.coop_idx == sorted(r.coop_idx)
    m = build_iou_matrix(table)
    coop = set(r.coop_idx)
    for k in coop:
        partner = int(np.argmax(m[k]))
        assert partner in coop


@given(table_rows, st.randoms())
def test_permutation_invariance(rows, rnd):
    table = [inst(k, x, y, yaw) for k, (x, y, yaw) in enumerate(rows)]
    perm = list(table)
    rnd.shuffle(perm)
    a, b = route(table), route(perm)
    assert {i.instance_id for i in a.single} == {i.instance_id for i in b.single}
    assert {i.instance_id for i in a.coop} == {i.instance_id for i in b.coop}
