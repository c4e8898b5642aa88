"""Trajectory error metrics in the shared metric world frame (no alignment)."""

from __future__ import annotations

import math
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DegenerateDenominatorError, LengthMismatchError
from .se3 import Pose


def _translations(poses: Sequence[Pose]) -> np.ndarray:
    return np.array([p.t for p in poses], dtype=float).reshape(-1, 3)


def ate_rmse(estimated: Sequence[Pose], truth: Sequence[Pose]) -> float:
    """Root mean square of per-frame translation errors."""
    if len(estimated) != len(truth):
        raise LengthMismatchError(f"{len(estimated)} estimated poses vs {len(truth)} ground-truth poses")
    if not estimated:
        raise LengthMismatchError("trajectories are empty")
    d = _translations(estimated) - _translations(truth)
    return float(math.sqrt(np.mean(np.sum(d * d, axis=1))))


def ate_rmse_frames(estimated: Mapping[int, Pose], truth: Mapping[int, Pose]) -> float:
    """ATE over the frames present in ``estimated``; every such frame needs a ground-truth pose."""
    frames = sorted(estimated)
    missing = [f for f in frames if f not in truth]
    if missing:
        raise LengthMismatchError(f"no ground truth for frames {missing[:5]}")
    return ate_rmse([estimated[f] for f in frames], [truth[f] for f in frames])


def path_length(poses: Sequence[Pose]) -> float:
    t = _translations(poses)
    if len(t) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(t, axis=0), axis=1)))


def percentage_error(ate: float, path_length: float, initial_depth: float) -> float:
    """ATE as a percentage of distance travelled plus initial depth."""
    denom = path_length + initial_depth
    if not denom > 0:
        raise DegenerateDenominatorError(f"path length + initial depth = {denom}")
    return 100.0 * ate / denom


# Named so alternative normalizations can be registered next to it.
PERCENTAGE_METRICS: dict[str, Callable[[float, float, float], float]] = {
    "path_plus_depth": percentage_error,
}
