import json
from dataclasses import replace

import numpy as np
import pytest

from mbslam import cli, config, formats, pipeline, sim
from mbslam.config import RunConfig
from mbslam.posegraph import ALL_CATEGORIES


@pytest.fixture(scope="module")
def zero_noise_run():
    scene = sim.generate(sim.zero_noise(frames=40))
    inputs, truth = pipeline.inputs_from_scene(scene)
    return scene, pipeline.run_inputs(inputs, RunConfig(), truth)


def test_zero_noise_closure(zero_noise_run):
    _, res = zero_noise_run
    assert {r["condition"] for r in res.rows} == {pipeline.INITIALIZATION, pipeline.FULL}
    assert {r["body"] for r in res.rows} == {"ego", "vehicle_1", "vehicle_2"}
    assert all(r["ate_m"] < 1e-6 for r in res.rows)


def test_localization_covers_detections(zero_noise_run):
    scene, res = zero_noise_run
    assert not res.localization.failures
    assert len(res.localization.fits) == len(scene.detections)


def test_condition_label():
    assert pipeline.condition_label(ALL_CATEGORIES) == "CC+CV+VV"
    assert pipeline.condition_label(["VV", "CC"]) == "CC+VV"


def test_sweep_csv_shape():
    scene = sim.generate(sim.straight(frames=20))
    inputs, truth = pipeline.inputs_from_scene(scene)
    T = [12, 15, 18, 20]
    rows = pipeline.sweep_threshold({"a": (inputs, truth.camera), "b": (inputs, truth.camera)}, T)
    lines = pipeline.sweep_csv(rows, T).splitlines()
    assert lines[0].startswith("# ")
    assert lines[1] == "sequence,T=12,T=15,T=18,T=20"
    assert [l.split(",")[0] for l in lines[2:]] == ["a", "b", "average"]
    assert all(len(l.split(",")) == 5 for l in lines[1:])
    with pytest.raises(ValueError):
        pipeline.sweep_threshold({}, [])


def test_ablation_summary_and_csv():
    rows = [
        {"body": "ego", "condition": "CC+CV+VV", "ate_m": 1.0},
        {"body": "vehicle_1", "condition": "CC+CV+VV", "ate_m": 3.0},
        {"body": "ego", "condition": "initialization", "ate_m": 2.0},
        {"body": "vehicle_1", "condition": "initialization", "ate_m": 4.0},
        {"body": "ego", "condition": "initialization", "ate_m": 4.0},
    ]
    s = pipeline.ablation_summary(rows)
    assert list(s) == ["initialization", "CC+CV+VV"]
    assert s["initialization"] == {"ego": 3.0, "vehicle_1": 4.0, "average": 3.5}
    text = pipeline.ablation_csv(s)
    assert text.splitlines()[0] == "condition,ego,vehicle_1,average"


def test_pipeline_files_and_determinism(tmp_path):
    cfg_path = cli.write_scene(sim.generate(sim.standard(seed=3, frames=25)), tmp_path / "scene")
    cfg = config.load(cfg_path, {"plot": "true"})
    first = pipeline.run_pipeline(cfg)
    out = cfg.output_dir
    report = (out / "report.json").read_bytes()
    assert pipeline.run_pipeline(cfg) == first
    assert (out / "report.json").read_bytes() == report

    data = json.loads(report)
    assert set(data) >= {"trajectories", "config_echo", "timings"}
    assert data["timings"] is None
    for row in data["trajectories"]:
        assert set(row) == {"body", "frames", "ate_m", "pct_error", "condition"}
    # one line per input frame for every body, gaps marked
    for body in ("ego", "vehicle_1", "vehicle_2"):
        poses = formats.read_poses(out / f"{body}.txt")
        assert len(poses) == 25
    assert formats.read_poses(out / "ego.txt")[0] is not None
    assert (out / "trajectories.svg").read_text().startswith("<svg")
    assert (out / "graph.txt").stat().st_size > 0


def test_vehicle_file_marks_unobserved_frames(tmp_path):
    cfg = sim.standard(frames=20)
    vehicles = (cfg.vehicles[0], sim.AgentProfile(track_id=5, x=3.0, z=-5.0, speed=30.0))
    scene = sim.generate(replace(cfg, vehicles=vehicles))
    observed = sorted(scene.track_truth_observed()[5])
    assert 0 not in observed and observed
    run = config.load(cli.write_scene(scene, tmp_path / "s"))
    pipeline.run_pipeline(run)
    poses = formats.read_poses(run.output_dir / "vehicle_5.txt")
    assert len(poses) == 20
    assert [f for f, p in enumerate(poses) if p is not None] == observed
