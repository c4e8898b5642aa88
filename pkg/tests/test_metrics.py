import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbslam import se3
from mbslam.errors import DegenerateDenominatorError, LengthMismatchError
from mbslam.metrics import PERCENTAGE_METRICS, ate_rmse, ate_rmse_frames, path_length, percentage_error
from mbslam.se3 import Pose


def line(n, offset=(0.0, 0.0, 0.0)):
    return [Pose(np.eye(3), np.array([0.0, 0.0, float(i)]) + offset) for i in range(n)]


def test_ate_examples():
    assert ate_rmse(line(5), line(5)) == 0.0
    assert abs(ate_rmse(line(5, (2.0, 0, 0)), line(5)) - 2.0) <= 1e-12
    est = [se3.translate(3, 0, 0), se3.translate(0, 4, 0)]
    assert abs(ate_rmse(est, [Pose.identity()] * 2) - math.sqrt(12.5)) <= 1e-12


def test_ate_errors():
    with pytest.raises(LengthMismatchError):
        ate_rmse(line(3), line(4))
    with pytest.raises(LengthMismatchError):
        ate_rmse([], [])
    with pytest.raises(LengthMismatchError):
        ate_rmse_frames({0: Pose.identity(), 5: Pose.identity()}, {0: Pose.identity()})


def test_ate_frames_uses_estimate_frames():
    gt = dict(enumerate(line(10)))
    est = {f: gt[f] @ se3.translate(1, 0, 0) for f in (2, 3, 7)}
    assert abs(ate_rmse_frames(est, gt) - 1.0) <= 1e-12


def test_percentage_examples():
    assert percentage_error(0.0, 10.0, 0.0) == 0.0
    assert abs(percentage_error(2.0, 80.0, 20.0) - 2.0) <= 1e-12
    assert abs(percentage_error(3.0, 100.0, 0.0) - 3.0) <= 1e-12
    assert PERCENTAGE_METRICS["path_plus_depth"] is percentage_error
    with pytest.raises(DegenerateDenominatorError):
        percentage_error(1.0, 0.0, 0.0)


def test_path_length():
    assert path_length(line(11)) == 10.0
    assert path_length(line(1)) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ate_invariant_under_shared_rigid_motion(seed):
    rng = np.random.default_rng(seed)
    gt = [Pose(se3.so3_exp(rng.normal(size=3)), rng.normal(size=3) * 20) for _ in range(15)]
    est = [p @ Pose(se3.so3_exp(rng.normal(size=3) * 0.1), rng.normal(size=3)) for p in gt]
    M = Pose(se3.so3_exp(rng.normal(size=3)), rng.normal(size=3) * 100)
    a = ate_rmse(est, gt)
    b = ate_rmse([M @ p for p in est], [M @ p for p in gt])
    assert abs(a - b) <= 1e-9 * max(1.0, a)
