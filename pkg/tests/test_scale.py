import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbslam import scale, se3, sim
from mbslam.errors import FallbackScaleError, NoCorrespondencesError, ScaleRecoveryError, ZeroTranslationError
from mbslam.ground import lift_ground_pixels
from mbslam.metrics import ate_rmse
from mbslam.scale import GroundCorrespondence
from mbslam.se3 import Pose


def ground_pairs(rng, rel_metric: Pose, n=20, max_depth=12.0, h=1.65):
    """Ground points seen from the current frame, and the same points in the previous frame."""
    curr = np.column_stack([rng.uniform(-4, 4, n), np.full(n, h), rng.uniform(3, max_depth, n)])
    prev = curr @ rel_metric.R.T + rel_metric.t
    return prev, curr


def test_single_correspondence_value():
    rel = Pose(np.eye(3), [0.0, 0.0, 1.0])
    c = GroundCorrespondence(np.array([0.0, 1.0, 7.0]), np.array([0.0, 1.0, 5.0]))
    assert scale.solve_scale([c], rel) == 2.0


def test_metric_consistent_is_unity():
    rng = np.random.default_rng(0)
    rel = Pose(se3.rot_y(0.05), [0.1, 0.0, 1.1])
    prev, curr = ground_pairs(rng, rel)
    assert abs(scale.solve_scale((prev, curr), rel) - 1.0) <= 1e-12


def test_known_scale_noiseless():
    rng = np.random.default_rng(1)
    metric = Pose(se3.rot_y(0.02), [0.05, 0.0, 1.2])
    prev, curr = ground_pairs(rng, metric)
    unscaled = Pose(metric.R, metric.t / 2.5)
    assert abs(scale.solve_scale((prev, curr), unscaled) - 2.5) <= 1e-9


def test_errors():
    rel = Pose(np.eye(3), [0.0, 0.0, 1.0])
    with pytest.raises(NoCorrespondencesError):
        scale.solve_scale([], rel)
    c = [GroundCorrespondence(np.ones(3), np.ones(3))]
    with pytest.raises(ZeroTranslationError):
        scale.solve_scale(c, Pose.identity())
    with pytest.raises(ZeroTranslationError):
        scale.scale_step(Pose.identity(), Pose.identity(), c)


def test_outlier_rejected():
    rng = np.random.default_rng(2)
    metric = Pose(np.eye(3), [0.0, 0.0, 1.0])
    prev, curr = ground_pairs(rng, metric, n=30)
    prev[3] += [0.0, 0.0, 25.0]
    assert scale.solve_scale((prev, curr), metric) == pytest.approx(1.0, abs=1e-12)
    assert scale.solve_scale((prev, curr), metric, robust=False) > 1.5


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_stationarity(seed):
    rng = np.random.default_rng(seed)
    rel = Pose(se3.so3_exp(rng.normal(size=3) * 0.1), rng.normal(size=3))
    prev, curr = rng.normal(size=(1, 3)) * 5, rng.normal(size=(1, 3)) * 5
    a = scale.per_correspondence_scales((prev, curr), rel)[0]
    f0 = scale.scale_objective(a, prev[0], curr[0], rel)
    for d in (1e-4, -1e-4):
        assert scale.scale_objective(a + d, prev[0], curr[0], rel) >= f0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 20.0))
def test_scale_equivariance(seed, s):
    rng = np.random.default_rng(seed)
    rel = Pose(se3.so3_exp(rng.normal(size=3) * 0.1), rng.normal(size=3))
    prev, curr = rng.normal(size=(8, 3)), rng.normal(size=(8, 3))
    a1 = scale.solve_scale((prev, curr), rel, robust=False)
    a2 = scale.solve_scale((prev, curr), Pose(rel.R, rel.t * s), robust=False)
    np.testing.assert_allclose(a2 * s * rel.t, a1 * rel.t, atol=1e-9 * (1 + abs(a1) * np.linalg.norm(rel.t)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rigid_motion_invariance(seed):
    rng = np.random.default_rng(seed)
    a_world = Pose(se3.so3_exp(rng.normal(size=3)), rng.normal(size=3))
    b_world = a_world @ Pose(se3.so3_exp(rng.normal(size=3) * 0.1), rng.normal(size=3))
    prev, curr = rng.normal(size=(8, 3)), rng.normal(size=(8, 3))
    alpha = scale.solve_scale((prev, curr), se3.relative(a_world, b_world), robust=False)
    # correspondences live in camera frames, so a world motion G changes only the poses
    G = Pose(se3.so3_exp(rng.normal(size=3)), rng.normal(size=3) * 10)
    moved = scale.solve_scale((prev, curr), se3.relative(G @ a_world, G @ b_world), robust=False)
    assert abs(moved - alpha) <= 1e-9 * max(1.0, abs(alpha))


class TestScaleStep:
    def test_metric_translation(self):
        rng = np.random.default_rng(3)
        metric = Pose(se3.rot_y(0.01), np.array([0.0, 0.0, 1.2]))
        prev, curr = ground_pairs(rng, metric)
        a = Pose(se3.rot_y(0.3), [2.0, 0.0, 5.0])
        b = a @ Pose(metric.R, metric.t * 0.4)
        out = scale.scale_step(a, b, (prev, curr))
        assert abs(np.linalg.norm(out.relative_pose.t) - 1.2) <= 1e-9
        assert out.correspondence_count == 20

    def test_all_beyond_threshold(self):
        rng = np.random.default_rng(4)
        metric = Pose(np.eye(3), [0.0, 0.0, 1.0])
        prev, curr = ground_pairs(rng, metric)
        curr = curr + [0, 0, 20.0]
        with pytest.raises(FallbackScaleError) as exc:
            scale.scale_step(Pose.identity(), metric, (prev, curr), depth_threshold=12)
        assert exc.value.surviving == 0

    def test_threshold_inclusive(self):
        metric = Pose(np.eye(3), [0.0, 0.0, 1.0])
        curr = np.array([[0, 1.65, 12.0], [1, 1.65, 12.0], [-1, 1.65, 12.0]])
        out = scale.scale_step(Pose.identity(), metric, (curr + metric.t, curr), depth_threshold=12)
        assert out.correspondence_count == 3


class TestRecoverScales:
    def test_fallback_reuses_previous(self):
        rng = np.random.default_rng(5)
        metric = Pose(np.eye(3), [0.0, 0.0, 1.0])
        unscaled = scale.chain([Pose(np.eye(3), [0, 0, 0.5])] * 4)
        good = ground_pairs(rng, metric)
        steps = scale.recover_scales(unscaled, [good, None, good, (np.zeros((0, 3)), np.zeros((0, 3)))])
        assert [s.fallback for s in steps] == [False, True, False, True]
        np.testing.assert_allclose([s.alpha for s in steps], 2.0, atol=1e-12)

    def test_leading_gap_takes_first_valid(self):
        rng = np.random.default_rng(6)
        metric = Pose(np.eye(3), [0.0, 0.0, 1.0])
        unscaled = scale.chain([Pose(np.eye(3), [0, 0, 0.25])] * 3)
        steps = scale.recover_scales(unscaled, [None, ground_pairs(rng, metric), None])
        np.testing.assert_allclose([s.alpha for s in steps], 4.0, atol=1e-12)
        assert steps[0].fallback

    def test_nothing_valid(self):
        unscaled = scale.chain([Pose(np.eye(3), [0, 0, 1.0])] * 2)
        with pytest.raises(ScaleRecoveryError):
            scale.recover_scales(unscaled, [None, None])

    def test_identity_anchor(self):
        rng = np.random.default_rng(7)
        metric = Pose(np.eye(3), [0.0, 0.0, 1.0])
        unscaled = [Pose(se3.rot_y(0.4), [5, 0, 5])]
        unscaled.append(unscaled[0] @ metric)
        out = scale.rescale_trajectory(unscaled, [ground_pairs(rng, metric)])
        assert out[0].R.tolist() == np.eye(3).tolist() and out[0].t.tolist() == [0, 0, 0]
        np.testing.assert_allclose(out[1].t, metric.t, atol=1e-12)


def lifted_pairs(scene, i):
    cfg = scene.config
    rows = scene.correspondences[(i, i + 1)]
    Xp, okp = lift_ground_pixels(cfg.intrinsics, cfg.plane, rows[:, :2])
    Xc, okc = lift_ground_pixels(cfg.intrinsics, cfg.plane, rows[:, 2:])
    ok = okp & okc
    return Xp[ok], Xc[ok]


def test_simulated_global_scale_noiseless():
    scene = sim.generate(sim.straight(frames=50, noise=sim.NoiseConfig(odometry_scale=0.3)))
    alphas = [s.alpha for s in scale.recover_scales(scene.odometry, [lifted_pairs(scene, i) for i in range(49)])]
    np.testing.assert_allclose(alphas, 1 / 0.3, atol=1e-9)
    traj = scale.rescale_trajectory(scene.odometry, [lifted_pairs(scene, i) for i in range(49)])
    assert ate_rmse(traj, scene.ego_truth) < 1e-6


def test_simulated_noisy_trajectory():
    noise = sim.NoiseConfig(correspondence_sigma=0.5, odometry_scale=0.3, odometry_jitter=0.01)
    scene = sim.generate(sim.straight(seed=3, frames=100, noise=noise))
    traj = scale.rescale_trajectory(scene.odometry, [lifted_pairs(scene, i) for i in range(99)])
    assert ate_rmse(traj, scene.ego_truth) < 0.02 * sim.path_length(scene.ego_truth)
