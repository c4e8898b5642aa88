import math
from dataclasses import replace

import numpy as np
import pytest

from mbslam import se3, sim
from mbslam.shape import instantiate_shape, project_points
from mbslam.se3 import Pose


def test_straight_path_length():
    cfg = replace(sim.straight(frames=50, noise=sim.NoiseConfig()), texture=sim.GroundTexture(density=0.01))
    scene = sim.generate(cfg)
    assert abs(sim.path_length(scene.ego_truth) - 49.0) <= 1e-9


def test_unicycle_arc_closed_form():
    # a full circle returns to the start
    rate = 2 * math.pi / (40 * 0.1)
    states = sim.integrate_unicycle(sim.AgentProfile(speed=5.0, yaw_rate=rate), 41, 0.1)
    np.testing.assert_allclose(states[-1, :2], [0.0, 0.0], atol=1e-12)
    radius = 5.0 / rate
    np.testing.assert_allclose(np.hypot(states[:, 0] - radius, states[:, 1]), radius, atol=1e-12)


def test_deterministic():
    a = sim.generate(sim.standard(seed=4, frames=20))
    b = sim.generate(sim.standard(seed=4, frames=20))
    for x, y in zip(a.detections, b.detections):
        assert x.bbox == y.bbox
        assert np.array_equal(x.keypoints.pixels, y.keypoints.pixels)
    for k in a.correspondences:
        assert np.array_equal(a.correspondences[k], b.correspondences[k])
    assert all(np.array_equal(p.t, q.t) for p, q in zip(a.odometry, b.odometry))


def test_draws_do_not_depend_on_length():
    short = sim.generate(sim.standard(seed=2, frames=10))
    long = sim.generate(sim.standard(seed=2, frames=30))
    for x, y in zip(short.detections, long.detections):
        assert np.array_equal(x.keypoints.pixels, y.keypoints.pixels)


def test_vehicles_on_plane():
    scene = sim.generate(sim.standard(frames=30))
    n, h = scene.config.plane.n, scene.config.plane.height
    for traj in scene.tracks_truth.values():
        for p in traj:
            contact = se3.transform_point(p, [0.0, 0.33, 0.0])
            assert abs(n @ contact + h) <= 1e-9


def test_zero_noise_keypoints_reproject():
    scene = sim.generate(sim.zero_noise(frames=20))
    K = scene.config.intrinsics
    for d in scene.detections:
        rel = se3.relative(scene.ego_truth[d.frame], scene.tracks_truth[d.track_id][d.frame])
        px = project_points(instantiate_shape(scene.basis, np.zeros(scene.basis.B), rel.R, rel.t), K)
        vis = d.keypoints.visible
        assert np.max(np.abs(px[vis] - d.keypoints.pixels[vis])) <= 1e-9


def test_zero_noise_correspondences_satisfy_motion():
    from mbslam.ground import lift_ground_pixels

    scene = sim.generate(sim.zero_noise(frames=10))
    K, plane = scene.config.intrinsics, scene.config.plane
    for i in range(9):
        rows = scene.correspondences[(i, i + 1)]
        Xp, _ = lift_ground_pixels(K, plane, rows[:, :2])
        Xc, _ = lift_ground_pixels(K, plane, rows[:, 2:])
        rel = se3.relative(scene.ego_truth[i], scene.ego_truth[i + 1])
        assert np.max(np.abs(Xp - (Xc @ rel.R.T + rel.t))) <= 1e-9


class TestCorruptOdometry:
    def test_identity(self):
        truth = sim.generate(sim.standard(frames=15)).ego_truth
        out = sim.corrupt_odometry(truth, 1.0, 0.0)
        for a, b in zip(truth, out):
            np.testing.assert_allclose(b.t, a.t, atol=1e-12)
            np.testing.assert_allclose(b.R, a.R, atol=1e-12)

    def test_global_scale(self):
        truth = sim.generate(sim.standard(frames=15)).ego_truth
        out = sim.corrupt_odometry(truth, 0.3, 0.0)
        for i in range(1, len(truth)):
            r_true = se3.relative(truth[i - 1], truth[i])
            r_out = se3.relative(out[i - 1], out[i])
            assert abs(np.linalg.norm(r_out.t) - 0.3 * np.linalg.norm(r_true.t)) <= 1e-12
            np.testing.assert_allclose(r_out.R, r_true.R, atol=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            sim.corrupt_odometry([Pose.identity()] * 2, 0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        sim.SimConfig(frame_count=1)
    with pytest.raises(ValueError):
        sim.SimConfig(ego=sim.AgentProfile(z=3.0))
    with pytest.raises(ValueError):
        sim.SimConfig(vehicles=(sim.AgentProfile(track_id=1), sim.AgentProfile(track_id=1)))


def test_intersection_is_sparse_near_field():
    from mbslam.ground import lift_ground_pixels

    scene = sim.generate(sim.intersection())
    K, plane = scene.config.intrinsics, scene.config.plane
    near = []
    for i in range(scene.config.frame_count - 1):
        rows = scene.correspondences[(i, i + 1)]
        Xc, ok = lift_ground_pixels(K, plane, rows[:, 2:])
        near.append(int(np.sum(ok & (Xc[:, 2] <= 12.0))))
    assert min(near) < 3 and max(near) > 20
