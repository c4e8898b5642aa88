import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbslam.errors import HorizonDegenerateError, NegativeDepthError
from mbslam.ground import (
    BoundingBox,
    CameraIntrinsics,
    GroundPlane,
    filter_by_depth,
    lift_ground_pixel,
    vehicle_position_from_bbox,
)
from mbslam.shape import project

KITTI = CameraIntrinsics(721.5, 721.5, 609.6, 172.9)
LEVEL = GroundPlane((0.0, -1.0, 0.0), 1.65)


class TestLiftGroundPixel:
    def test_unit_intrinsics(self):
        K = CameraIntrinsics(1.0, 1.0, 0.0, 0.0)
        X = lift_ground_pixel(K, GroundPlane((0, -1, 0), 1.5), (0.0, 0.5))
        np.testing.assert_allclose(X, [0.0, 1.5, 3.0], atol=1e-15)
        assert GroundPlane((0, -1, 0), 1.5).n @ X == pytest.approx(-1.5)

    def test_horizon(self):
        with pytest.raises(HorizonDegenerateError):
            lift_ground_pixel(KITTI, LEVEL, (100.0, KITTI.cy))

    def test_above_horizon(self):
        with pytest.raises(NegativeDepthError):
            lift_ground_pixel(KITTI, LEVEL, (609.6, 100.0))

    def test_kitti_like(self):
        X = lift_ground_pixel(KITTI, LEVEL, (609.6, 300.0))
        depth = 1.65 * 721.5 / (300.0 - 172.9)
        np.testing.assert_allclose(X, [0.0, 1.65, depth], atol=1e-12)
        assert abs(X[2] - 9.367) < 1e-3

    @settings(max_examples=200, deadline=None)
    @given(
        st.floats(300, 1500), st.floats(0.8, 1.25), st.floats(200, 1000), st.floats(100, 600),
        st.floats(-0.2, 0.2), st.floats(-0.2, 0.2), st.floats(0.5, 3.0),
        st.floats(0, 1), st.floats(0.05, 1),
    )
    def test_plane_membership_and_reprojection(self, f, aspect, cx, cy, tilt_x, tilt_z, h, fu, fv):
        K = CameraIntrinsics(f, f * aspect, cx, cy)
        n = np.array([tilt_x, -1.0, tilt_z])
        plane = GroundPlane(tuple(n), h)
        # a ground point in front of the camera, then its pixel
        n = plane.n
        d = np.array([fu * 2 - 1, 0.0, 1.0])
        d = d - (d @ n) * n
        X0 = -h * n + (2 + 40 * fv) * d / np.linalg.norm(d)
        if X0[2] <= 0.5:
            return
        px = project(X0, K)
        X = lift_ground_pixel(K, plane, px)
        assert abs(n @ X + h) <= 1e-9
        np.testing.assert_allclose(project(X, K), px, atol=1e-6)

    def test_depth_increases_toward_horizon(self):
        depths = [lift_ground_pixel(KITTI, LEVEL, (500.0, v))[2] for v in np.linspace(370, 180, 40)]
        assert np.all(np.diff(depths) > 0)


class TestFilterByDepth:
    def test_empty(self):
        assert filter_by_depth([], 12) == []

    def test_inclusive_boundary(self):
        pts = [np.array([0, 1.65, z]) for z in (5, 11.9, 12.0, 12.1)]
        kept = filter_by_depth(pts, 12)
        assert [p[2] for p in kept] == [5, 11.9, 12.0]

    def test_all_beyond(self):
        assert filter_by_depth([np.array([0, 0, 13.0]), np.array([0, 0, 40.0])], 12) == []

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            filter_by_depth([], 0)


class TestVehiclePosition:
    def test_delegates_to_bottom_centre(self):
        bbox = BoundingBox(559.6, 250.0, 659.6, 300.0)
        np.testing.assert_array_equal(
            vehicle_position_from_bbox(KITTI, LEVEL, bbox), lift_ground_pixel(KITTI, LEVEL, (609.6, 300.0))
        )

    def test_horizon_bbox(self):
        with pytest.raises(HorizonDegenerateError):
            vehicle_position_from_bbox(KITTI, LEVEL, BoundingBox(500, 100, 600, KITTI.cy))

    def test_one_pixel_bbox_error(self):
        # 1080p camera; every +-1 px corner perturbation of a rendered box.
        K = CameraIntrinsics(2000.0, 2000.0, 960.0, 540.0)
        contact = np.array([2.0, 1.65, 20.0])
        u, v = project(contact, K)
        half_w = 2000.0 * 0.9 / 20.0
        box = (u - half_w, v - 120.0, u + half_w, v)
        worst = 0.0
        for signs in itertools.product((-1.0, 1.0), repeat=4):
            noisy = BoundingBox(*(c + s for c, s in zip(box, signs)))
            X = vehicle_position_from_bbox(K, LEVEL, noisy)
            worst = max(worst, float(np.linalg.norm(X - contact)))
        assert worst < 0.2


def test_invalid_types():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 1.0, 0, 0)
    with pytest.raises(ValueError):
        GroundPlane((0, -1, 0), -1.0)
    with pytest.raises(ValueError):
        BoundingBox(10, 10, 5, 20)
    assert abs(np.linalg.norm(GroundPlane((0, -2, 0.1), 1.0).n) - 1) < 1e-12
