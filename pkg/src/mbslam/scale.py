"""Metric scale for monocular odometry from lifted ground-point correspondences.

For consecutive frames with relative odometry ``(R, tr)`` (frame t expressed in
frame t-1, unknown scale) and a ground point lifted in both frames, the scale
``alpha`` minimizing ``|X_prev - (R X_curr + alpha tr)|^2`` is
``(X_prev - R X_curr) . tr / (tr . tr)``. The step scale is the mean of the
per-correspondence solutions after MAD outlier rejection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import se3
from .errors import (
    FallbackScaleError,
    NoCorrespondencesError,
    ScaleRecoveryError,
    ZeroTranslationError,
)
from .ground import DEFAULT_DEPTH_THRESHOLD
from .se3 import Pose

log = logging.getLogger(__name__)

MIN_TRANSLATION = 1e-6
MIN_CORRESPONDENCES = 3
MAD_CUTOFF = 3.0


@dataclass(frozen=True, eq=False)
class GroundCorrespondence:
    point_prev: np.ndarray
    point_curr: np.ndarray


@dataclass(frozen=True, eq=False)
class ScaledOdometry:
    relative_pose: Pose
    alpha: float
    correspondence_count: int
    fallback: bool = False


def as_arrays(correspondences) -> tuple[np.ndarray, np.ndarray]:
    """(N, 3) arrays of previous- and current-frame points.

    Accepts a sequence of :class:`GroundCorrespondence` or a ``(prev, curr)``
    pair of arrays.
    """
    if isinstance(correspondences, tuple) and len(correspondences) == 2 and isinstance(correspondences[0], np.ndarray):
        prev, curr = correspondences
    else:
        correspondences = list(correspondences)
        if not correspondences:
            return np.zeros((0, 3)), np.zeros((0, 3))
        prev = [c.point_prev for c in correspondences]
        curr = [c.point_curr for c in correspondences]
    return np.asarray(prev, dtype=float).reshape(-1, 3), np.asarray(curr, dtype=float).reshape(-1, 3)


def scale_objective(alpha: float, point_prev, point_curr, rel: Pose) -> float:
    """``F(alpha)^T F(alpha)`` for one correspondence."""
    F = np.asarray(point_prev) - (rel.R @ np.asarray(point_curr) + alpha * rel.t)
    return float(F @ F)


def per_correspondence_scales(correspondences, rel: Pose) -> np.ndarray:
    prev, curr = as_arrays(correspondences)
    tr = rel.t
    tt = float(tr @ tr)
    if tt <= MIN_TRANSLATION**2:
        raise ZeroTranslationError(f"relative translation norm {np.sqrt(tt):.3g} is too small to observe scale")
    return ((prev - curr @ rel.R.T) @ tr) / tt


def reject_outliers(alphas: np.ndarray, cutoff: float = MAD_CUTOFF) -> np.ndarray:
    """Boolean mask of values within ``cutoff`` median absolute deviations of the median."""
    med = np.median(alphas)
    dev = np.abs(alphas - med)
    mad = np.median(dev)
    return dev <= cutoff * mad + 1e-12 * (1.0 + abs(med))


def solve_scale(correspondences, rel: Pose, *, robust: bool = True) -> float:
    """Mean of per-correspondence scale solutions (after MAD rejection if ``robust``)."""
    prev, _ = as_arrays(correspondences)
    if len(prev) == 0:
        raise NoCorrespondencesError("no ground correspondences")
    alphas = per_correspondence_scales(correspondences, rel)
    if robust and len(alphas) > 2:
        alphas = alphas[reject_outliers(alphas)]
    return float(np.mean(alphas))


def scale_step(
    prev_world: Pose,
    curr_world: Pose,
    correspondences,
    depth_threshold: float = DEFAULT_DEPTH_THRESHOLD,
    min_count: int = MIN_CORRESPONDENCES,
) -> ScaledOdometry:
    """Metric relative pose between two unscaled odometry frames.

    Correspondences are kept when the current-frame point is within
    ``depth_threshold`` (inclusive). Raises :class:`FallbackScaleError` when
    fewer than ``min_count`` survive.
    """
    rel = se3.relative(prev_world, curr_world)
    if float(np.linalg.norm(rel.t)) <= MIN_TRANSLATION:
        raise ZeroTranslationError("stationary or rotation-only step")
    prev, curr = as_arrays(correspondences)
    keep = curr[:, 2] <= depth_threshold
    n = int(keep.sum())
    if n < min_count:
        raise FallbackScaleError(f"{n} correspondences within {depth_threshold} m, need {min_count}", surviving=n)
    alpha = solve_scale((prev[keep], curr[keep]), rel)
    return ScaledOdometry(Pose(rel.R, alpha * rel.t), alpha, n)


def recover_scales(
    unscaled: Sequence[Pose],
    per_frame_correspondences: Sequence,
    depth_threshold: float = DEFAULT_DEPTH_THRESHOLD,
    min_count: int = MIN_CORRESPONDENCES,
) -> list[ScaledOdometry]:
    """Scaled relative step for every consecutive frame pair.

    Steps without enough correspondences reuse the last valid scale; steps
    before the first valid scale take that first valid scale.
    """
    if len(unscaled) < 2:
        raise ValueError("need at least two poses")
    n_steps = len(unscaled) - 1
    if len(per_frame_correspondences) != n_steps:
        raise ValueError(f"expected {n_steps} correspondence sets, got {len(per_frame_correspondences)}")

    rels: list[Pose] = []
    alphas: list[float | None] = []
    counts: list[int] = []
    for i in range(n_steps):
        rel = se3.relative(unscaled[i], unscaled[i + 1])
        rels.append(rel)
        corr = per_frame_correspondences[i]
        if corr is None:
            corr = []
        try:
            step = scale_step(unscaled[i], unscaled[i + 1], corr, depth_threshold, min_count)
        except FallbackScaleError as exc:
            alphas.append(None)
            counts.append(exc.surviving)
            continue
        except ZeroTranslationError:
            alphas.append(None)
            counts.append(0)
            continue
        alphas.append(step.alpha)
        counts.append(step.correspondence_count)

    valid = [a for a in alphas if a is not None]
    if not valid:
        raise ScaleRecoveryError("no frame pair has enough ground correspondences to fix the scale")
    n_fallback = sum(a is None for a in alphas)
    if n_fallback:
        log.info("%d of %d steps reuse a previous scale", n_fallback, n_steps)

    steps = []
    last = valid[0]
    for rel, a, n in zip(rels, alphas, counts):
        fallback = a is None
        if not fallback:
            last = a
        steps.append(ScaledOdometry(Pose(rel.R, last * rel.t), last, n, fallback))
    return steps


def chain(steps: Sequence[Pose], start: Pose | None = None) -> list[Pose]:
    out = [Pose.identity() if start is None else start]
    for s in steps:
        out.append(out[-1] @ s)
    return out


def rescale_trajectory(
    unscaled: Sequence[Pose],
    per_frame_correspondences: Sequence,
    depth_threshold: float = DEFAULT_DEPTH_THRESHOLD,
    min_count: int = MIN_CORRESPONDENCES,
) -> list[Pose]:
    """Metric world-frame camera trajectory anchored at the identity."""
    steps = recover_scales(unscaled, per_frame_correspondences, depth_threshold, min_count)
    return chain([s.relative_pose for s in steps])
