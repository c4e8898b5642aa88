import json
import subprocess
import sys

import pytest

from mbslam import cli, formats


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    assert cli.main(["simulate", "--preset", "zero-noise", "--frames", "15", "--out", str(out)]) == 0
    return out


def test_simulate_writes_inputs(scene_dir):
    for name in ("odometry", "detections", "correspondences", "basis", "gt_camera", "gt_tracks"):
        assert (scene_dir / f"{name}.txt").is_file()
    assert "depth_threshold = 12.0" in (scene_dir / "run.cfg").read_text()


def test_run_then_evaluate(scene_dir, tmp_path, capsys):
    out = tmp_path / "res"
    assert cli.main(["run", "--config", str(scene_dir / "run.cfg"), "--output-dir", str(out),
                     "--edges", "CC,CV"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert {r["condition"] for r in report["trajectories"]} == {"initialization", "CC+CV"}
    capsys.readouterr()
    assert cli.main(["evaluate", "--estimate", str(out / "ego.txt"), "--truth", str(scene_dir / "gt_camera.txt")]) == 0
    ev = json.loads(capsys.readouterr().out)
    assert ev["frames"] == 15 and ev["ate_m"] < 1e-6


def test_ablate_writes_table(scene_dir, tmp_path):
    out = tmp_path / "abl"
    assert cli.main(["ablate", "--config", str(scene_dir / "run.cfg"), "--output-dir", str(out)]) == 0
    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0] == "condition,ego,vehicle_1,vehicle_2,average"
    assert [l.split(",")[0] for l in lines[1:]] == ["initialization", "CC+CV", "CC+VV", "CV+VV", "CC+CV+VV"]


def test_sweep(tmp_path, capsys):
    csv = tmp_path / "sweep.csv"
    assert cli.main(["sweep-threshold", "--preset", "straight", "--frames", "12", "--thresholds", "12,20",
                     "--out", str(csv)]) == 0
    assert csv.read_text().splitlines()[1] == "sequence,T=12,T=20"


def test_parse_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("odometry = odo.txt\nwhat\n")
    assert cli.main(["run", "--config", str(bad)]) == 1
    assert ":2:" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "missing.cfg")]) == 1


def test_numerical_failure_exit_code(scene_dir, tmp_path):
    # no ground correspondences anywhere: the metric scale cannot be recovered
    empty = tmp_path / "corr.txt"
    formats.write_correspondences(empty, {})
    code = cli.main(["run", "--config", str(scene_dir / "run.cfg"), "--set", f"correspondences={empty}",
                     "--output-dir", str(tmp_path / "o")])
    assert code == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "mbslam", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "sweep-threshold" in proc.stdout
