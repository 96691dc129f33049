import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from instfuse.cli import main
from instfuse.fusion import WEIGHT_ORDER, save_weights
from instfuse.wire import read_msgdump


@pytest.fixture(scope="module")
def scene_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("scene") / "scene.json"
    assert main(["gen-scene", "--objects", "10", "--agents", "2", "--frames", "8", "--seed", "7",
                 "-o", str(path)]) == 0
    return path


def test_gen_scene_is_reproducible(tmp_path, scene_file, capsys):
    again = tmp_path / "again.json"
    assert main(["gen-scene", "--objects", "10", "--agents", "2", "--frames", "8", "--seed", "7",
                 "-o", str(again)]) == 0
    assert again.read_bytes() == scene_file.read_bytes()
    assert "seed 7" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["gen-scene", "--objects", "-1", "-o", "x.json"],
    ["gen-scene", "--agents", "0", "-o", "x.json"],
    ["run"],
    ["run", "--scene", "s.json", "--strategy", "bogus"],
    ["run", "--scene", "s.json", "--lambda", "2"],
    ["run", "--scene", "s.json", "--jobs", "0"],
    ["sweep-noise", "--scene", "s.json", "--levels", "a,b"],
    ["nope"],
])
def test_usage_errors_exit_2(argv):
    assert main(argv) == 2


def test_runtime_errors_exit_1(tmp_path, scene_file, capsys):
    assert main(["run", "--scene", str(tmp_path / "missing.json"), "--out-dir", str(tmp_path)]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--scene", str(bad), "--out-dir", str(tmp_path)]) == 1
    w = tmp_path / "w.cfw"
    save_weights(w, {k: np.eye(8) for k in WEIGHT_ORDER}, 8)
    w.write_bytes(b"NOPE" + w.read_bytes()[4:])
    assert main(["run", "--scene", str(scene_file), "--weights", str(w), "--out-dir", str(tmp_path)]) == 1
    assert "version-unsupported" in capsys.readouterr().err


def test_run_all_writes_three_rows(tmp_path, scene_file, capsys):
    dump = tmp_path / "m.msgdump"
    assert main(["run", "--scene", str(scene_file), "--strategy", "all", "--seed", "7",
                 "--out-dir", str(tmp_path), "--dump-messages", str(dump)]) == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    assert [r["strategy"] for r in doc["rows"]] == ["none", "late", "instance"]
    for r in doc["rows"]:
        assert 0 <= r["ap50"] <= 1 and 0 <= r["ap70"] <= 1
    table = (tmp_path / "report.txt").read_text()
    for name in ("No Fusion", "Late Fusion", "Instance"):
        assert name in table
    assert "lambda=0.1" in table and "feature_dim=256" in table
    assert len(read_msgdump(dump)) == 8


def test_loaded_weights_run(tmp_path, scene_file):
    w = tmp_path / "w.cfw"
    save_weights(w, {k: np.eye(256) for k in WEIGHT_ORDER}, 256)
    assert main(["run", "--scene", str(scene_file), "--weights", str(w), "--out-dir", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["settings"]["attention_mode"] == "loaded" and doc["settings"]["residual"] is True


def test_sweep_matches_run(tmp_path, scene_file):
    sweep_dir, run_dir = tmp_path / "sweep", tmp_path / "run"
    assert main(["sweep-noise", "--scene", str(scene_file), "--out-dir", str(sweep_dir)]) == 0
    assert main(["run", "--scene", str(scene_file), "--out-dir", str(run_dir)]) == 0
    sweep = json.loads((sweep_dir / "sweep.json").read_text())["rows"]
    assert len(sweep) == 5
    clean = json.loads((run_dir / "report.json").read_text())["rows"][0]
    assert sweep[0] == clean
    rows = list(csv.DictReader((sweep_dir / "sweep.csv").open()))
    assert [r["sigma_t_m"] for r in rows] == ["0.0", "0.1", "0.2", "0.3", "0.4"]
    first = (sweep_dir / "sweep.csv").read_bytes()
    assert main(["sweep-noise", "--scene", str(scene_file), "--out-dir", str(sweep_dir)]) == 0
    assert (sweep_dir / "sweep.csv").read_bytes() == first


def test_sweep_custom_levels(tmp_path, scene_file):
    assert main(["sweep-noise", "--scene", str(scene_file), "--levels", "0.0,0.2",
                 "--out-dir", str(tmp_path)]) == 0
    assert len(json.loads((tmp_path / "sweep.json").read_text())["rows"]) == 2


def test_bench_bandwidth(tmp_path, scene_file, capsys):
    assert main(["bench-bandwidth", "--scene", str(scene_file), "--out-dir", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "bandwidth.json").read_text())
    assert set(doc) == {"none", "late", "instance"}
    assert doc["none"]["mean_bytes"] == 0 and doc["none"]["log2_text"] == "n/a"
    assert "instance" in capsys.readouterr().out


def test_bench_bandwidth_empty_scene(tmp_path):
    scene = tmp_path / "empty.json"
    assert main(["gen-scene", "--objects", "0", "--frames", "2", "--preset", "noiseless",
                 "-o", str(scene)]) == 0
    assert main(["bench-bandwidth", "--scene", str(scene), "--out-dir", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "bandwidth.json").read_text())
    assert doc["instance"]["mean_bytes"] == 0


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "instfuse", "gen-scene", "--objects", "-3", "-o", "x"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "usage" in proc.stderr
