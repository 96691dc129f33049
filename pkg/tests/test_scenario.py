import json

import jsonschema
import numpy as np
import pytest

from instfuse.geometry import bev_intersection_area, points_in_box, relative_pose, transform_box, IDENTITY
from instfuse.scenario import (
    AgentConfig,
    Instance,
    Layout,
    PRESET_NAMES,
    embed,
    emulate_detections,
    generate_frames,
    generate_scene,
    load_scene,
    preset_layout,
    save_scene,
    scene_schema,
    scene_to_json,
    stream_rng,
    synthesize_points,
)


def test_stream_rng_is_deterministic_and_independent():
    a = stream_rng(3, "x", 1).random(5)
    assert np.array_equal(a, stream_rng(3, "x", 1).random(5))
    assert not np.array_equal(a, stream_rng(3, "y", 1).random(5))
    assert not np.array_equal(a, stream_rng(3, "x", 2).random(5))


def test_embed_unit_norm_and_keyed_by_id():
    e = embed(5, 64)
    assert np.linalg.norm(e) == pytest.approx(1.0)
    assert np.array_equal(e, embed(5, 64))
    assert abs(float(e @ embed(6, 64))) < 0.6


def test_generate_scene_deterministic():
    objs, agents = generate_scene(11, 15, 3)
    assert (objs, agents) == generate_scene(11, 15, 3)
    assert len(agents) == 3 and len(objs) == 15
    a = generate_frames(11, 15, 3, 4)
    assert scene_to_json(a) == scene_to_json(generate_frames(11, 15, 3, 4))
    assert len({o.id for f in a.frames for o in f}) == 60


def test_objects_do_not_overlap():
    scene = generate_frames(4, 25, 2, 5, Layout())
    for objs in scene.frames:
        for i in range(len(objs)):
            for j in range(i + 1, len(objs)):
                assert bev_intersection_area(objs[i].box, objs[j].box) < 1e-12


def test_noiseless_detection_is_exact():
    scene = generate_frames(2, 10, 2, 1, preset_layout("noiseless"))
    ego = scene.agents[0]
    dets = emulate_detections(scene.frames[0], ego, seed=2, d=32)
    to_ego = relative_pose(ego.pose, IDENTITY)
    truth = {o.id: transform_box(to_ego, o.box) for o in scene.frames[0]}
    visible = [o for o in scene.frames[0] if ego.in_range(truth[o.id].cx, truth[o.id].cy)]
    assert len(dets) == len(visible)
    for d in dets:
        t = truth[d.instance_id]
        assert abs(d.box.cx - t.cx) < 1e-9 and abs(d.box.cy - t.cy) < 1e-9
        assert np.allclose(d.feature, embed(d.instance_id, 32) * ego.feature_scale + ego.feature_offset)


def test_detections_sorted_and_capped():
    cfg = AgentConfig(0, score_noise=0.1, false_positive_rate=5, query_cap=4)
    scene = generate_frames(8, 12, 1, 1)
    dets = emulate_detections(scene.frames[0], cfg, seed=8, d=16)
    assert len(dets) == 4
    assert [d.score for d in dets] == sorted((d.score for d in dets), reverse=True)


def test_synthesized_points_lie_in_boxes():
    scene = generate_frames(5, 8, 1, 1)
    cloud = synthesize_points(scene.frames[0], scene.agents[0], 20.0, 5, 0)
    boxes = [transform_box(relative_pose(scene.agents[0].pose, IDENTITY), o.box) for o in scene.frames[0]]
    inside = np.zeros(len(cloud.points), dtype=bool)
    for b in boxes:
        inside |= points_in_box(cloud.points, b)
    assert len(cloud) > 0 and inside.all()


def test_scene_json_round_trip(tmp_path):
    scene = generate_frames(9, 6, 2, 3, preset_layout("dair"))
    path = tmp_path / "s.json"
    save_scene(scene, path)
    jsonschema.validate(json.loads(path.read_text()), scene_schema())
    again = load_scene(path)
    assert scene_to_json(again) == scene_to_json(scene)
    save_scene(again, tmp_path / "t.json")
    assert (tmp_path / "t.json").read_bytes() == path.read_bytes()


def test_bad_scene_rejected(tmp_path):
    doc = scene_to_json(generate_frames(1, 2, 1, 1))
    doc["schema_version"] = 99
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(jsonschema.ValidationError):
        load_scene(p)


def test_presets_exist():
    for name in PRESET_NAMES:
        assert isinstance(preset_layout(name), Layout)
    with pytest.raises(ValueError):
        preset_layout("nope")


def test_instance_validation():
    with pytest.raises(ValueError):
        Instance(0, 0, np.zeros(4), generate_scene(0, 1, 1)[0][0].box, 1.5)
    with pytest.raises(ValueError):
        AgentConfig(0, range_x=0)
