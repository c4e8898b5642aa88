from pathlib import Path

import numpy as np
import pytest

from mbslam import config
from mbslam.errors import ParseError
from mbslam.posegraph import Category


def write_cfg(tmp_path, text):
    p = tmp_path / "run.cfg"
    p.write_text(text)
    return p


def test_parse_and_resolve_paths(tmp_path):
    p = write_cfg(tmp_path, "# comment\nodometry = data/odo.txt\nfx = 700\ncamera_height = 1.5\n"
                            "plane_normal = 0 -1 0\nedges = CC,VV\nlambda_cc = 50\nplot = yes\n")
    cfg = config.load(p)
    assert cfg.odometry == tmp_path / "data" / "odo.txt"
    assert cfg.intrinsics.fx == 700.0 and cfg.intrinsics.fy == 721.5377
    assert cfg.plane.height == 1.5
    assert cfg.edges == frozenset({Category.CC, Category.VV})
    assert cfg.confidence.lambda_cc == 50.0
    assert cfg.plot is True


def test_overrides_win(tmp_path):
    p = write_cfg(tmp_path, "depth_threshold = 12\noutput_dir = out\n")
    cfg = config.load(p, {"depth_threshold": "18", "output_dir": "elsewhere"})
    assert cfg.depth_threshold == 18.0
    assert cfg.output_dir == Path("elsewhere")


@pytest.mark.parametrize("text, match", [
    ("bogus = 1\n", "unknown"),
    ("fx = 1\nfx = 2\n", "duplicate"),
    ("no equals sign\n", ":1:"),
    ("depth_threshold = 0\n", "positive"),
    ("edges = CC,XX\n", "XX"),
])
def test_errors(tmp_path, text, match):
    with pytest.raises(ParseError, match=match):
        config.load(write_cfg(tmp_path, text))


def test_missing_input_file(tmp_path):
    cfg = config.load(write_cfg(tmp_path, "odometry = nope.txt\n"))
    with pytest.raises(FileNotFoundError):
        cfg.check_inputs()


def test_write_round_trip(tmp_path):
    cfg = config.RunConfig(odometry=tmp_path / "odo.txt", output_dir=tmp_path / "out", depth_threshold=15.0,
                           edges=frozenset({Category.CV}), name="x")
    p = tmp_path / "saved.cfg"
    config.write(p, cfg, relative_to=tmp_path)
    assert "odometry = odo.txt" in p.read_text()
    back = config.load(p)
    assert back.odometry == cfg.odometry and back.output_dir == cfg.output_dir
    assert config.to_mapping(back) == config.to_mapping(cfg)
    np.testing.assert_array_equal(back.plane.n, cfg.plane.n)
