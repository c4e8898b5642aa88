"""Synthetic planar multi-vehicle scenes rendered into pipeline inputs.

The world frame is the camera frame at frame 0. Ego camera and vehicles
follow unicycle kinematics on the ground plane, integrated exactly over each
time step. Vehicle frames use the template convention (x right, y down,
z forward, origin at the mean wheel centre).

Every random draw comes from a Philox generator keyed on
``(seed, stream, frame, track)``, so the draws for one frame do not depend on
what was rendered before it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import se3
from .formats import Detection
from .ground import BoundingBox, CameraIntrinsics, GroundPlane
from .se3 import Pose
from .shape import WHEEL_RADIUS, KeypointObservation, ShapeBasis, instantiate_shape, template_basis

KITTI_INTRINSICS = CameraIntrinsics(721.5377, 721.5377, 609.5593, 172.854)
KITTI_IMAGE_SIZE = (1242, 375)
KITTI_PLANE = GroundPlane((0.0, -1.0, 0.0), 1.65)

_TEXTURE, _ODOMETRY, _KEYPOINTS, _BBOX, _CORRESPONDENCES = range(5)


def counter_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *keys])))


@dataclass(frozen=True)
class AgentProfile:
    """Planar start state and motion of one agent.

    ``x`` is lateral (right) and ``z`` forward on the ground, in metres, in
    the frame-0 camera's ground coordinates; ``yaw`` turns +z toward +x.
    ``yaw_schedule`` holds ``(start_frame, yaw_rate)`` segments overriding
    ``yaw_rate`` from that frame on.
    """

    track_id: int = 0
    x: float = 0.0
    z: float = 0.0
    yaw: float = 0.0
    speed: float = 10.0
    yaw_rate: float = 0.0
    yaw_schedule: tuple[tuple[int, float], ...] = ()
    shape: tuple[float, ...] = ()

    def rate_at(self, step: int) -> float:
        rate = self.yaw_rate
        for start, r in sorted(self.yaw_schedule):
            if step >= start:
                rate = r
        return rate


@dataclass(frozen=True)
class NoiseConfig:
    keypoint_sigma: float = 0.0  # px
    bbox_sigma: float = 0.0  # px, per box edge
    correspondence_sigma: float = 0.0  # px, per frame
    odometry_scale: float = 1.0
    odometry_jitter: float = 0.0  # relative std of per-step scale


@dataclass(frozen=True)
class GroundTexture:
    """Trackable ground features scattered along the ego path."""

    density: float = 0.5  # features per m^2
    half_width: float = 10.0  # m either side of the path
    lookahead: float = 60.0  # m of road beyond the final pose
    voids: tuple[tuple[float, float, float], ...] = ()  # (x, z, radius) featureless discs


@dataclass(frozen=True)
class SimConfig:
    frame_count: int = 100
    dt: float = 0.1
    ego: AgentProfile = AgentProfile()
    vehicles: tuple[AgentProfile, ...] = ()
    intrinsics: CameraIntrinsics = KITTI_INTRINSICS
    image_size: tuple[int, int] = KITTI_IMAGE_SIZE
    plane: GroundPlane = KITTI_PLANE
    noise: NoiseConfig = NoiseConfig()
    texture: GroundTexture = GroundTexture()
    max_detection_depth: float = 80.0
    max_feature_depth: float = 60.0
    seed: int = 0
    name: str = "sim"

    def __post_init__(self):
        if self.frame_count < 2:
            raise ValueError("frame_count must be at least 2")
        if (self.ego.x, self.ego.z, self.ego.yaw) != (0.0, 0.0, 0.0):
            raise ValueError("the ego camera defines the world frame and must start at the origin with zero yaw")
        ids = [v.track_id for v in self.vehicles]
        if len(set(ids)) != len(ids):
            raise ValueError("vehicle track ids must be unique")


@dataclass(eq=False)
class SimScene:
    config: SimConfig
    basis: ShapeBasis
    ego_truth: list[Pose]
    tracks_truth: dict[int, list[Pose]]
    detections: list[Detection]
    correspondences: dict[tuple[int, int], np.ndarray]
    odometry: list[Pose]
    features: np.ndarray = field(repr=False)

    def observed_frames(self, track_id: int) -> list[int]:
        return sorted(d.frame for d in self.detections if d.track_id == track_id)

    def track_truth_observed(self) -> dict[int, dict[int, Pose]]:
        out: dict[int, dict[int, Pose]] = {}
        for d in self.detections:
            out.setdefault(d.track_id, {})[d.frame] = self.tracks_truth[d.track_id][d.frame]
        return out


class _PlaneFrame:
    """Planar coordinates (x right, z forward) on the ground plane of the frame-0 camera."""

    def __init__(self, plane: GroundPlane):
        self.n = plane.n
        self.h = plane.height
        self.R0 = se3.yaw_about(self.n, [0.0, 0.0, 1.0])

    def heading_rotation(self, yaw: float) -> np.ndarray:
        return se3.so3_exp(-self.n * yaw) @ self.R0

    def point(self, x, z, lift=0.0) -> np.ndarray:
        """World point at planar (x, z), ``lift`` metres above the ground (``lift=h`` is camera height)."""
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        foot = -self.h * self.n
        out = foot + np.multiply.outer(x, self.R0[:, 0]) + np.multiply.outer(z, self.R0[:, 2]) + lift * self.n
        return out


def integrate_unicycle(profile: AgentProfile, frame_count: int, dt: float) -> np.ndarray:
    """(frame_count, 3) array of planar ``(x, z, yaw)``; constant-rate arcs between frames."""
    out = np.zeros((frame_count, 3))
    x, z, yaw = profile.x, profile.z, profile.yaw
    v = profile.speed
    out[0] = x, z, yaw
    for i in range(1, frame_count):
        w = profile.rate_at(i - 1)
        yaw1 = yaw + w * dt
        if abs(w) < 1e-12:
            x += v * dt * math.sin(yaw)
            z += v * dt * math.cos(yaw)
        else:
            x += v / w * (math.cos(yaw) - math.cos(yaw1))
            z += v / w * (math.sin(yaw1) - math.sin(yaw))
        yaw = yaw1
        out[i] = x, z, yaw
    return out


def path_length(poses: Sequence[Pose]) -> float:
    t = np.array([p.t for p in poses])
    return float(np.sum(np.linalg.norm(np.diff(t, axis=0), axis=1)))


def corrupt_odometry(truth: Sequence[Pose], global_scale: float, jitter: float = 0.0, seed: int = 0) -> list[Pose]:
    """Scale every relative translation by ``global_scale * (1 + eps_t)`` and re-chain from identity."""
    if not global_scale > 0:
        raise ValueError("global_scale must be positive")
    out = [Pose.identity()]
    for i in range(1, len(truth)):
        rel = se3.relative(truth[i - 1], truth[i])
        eps = counter_rng(seed, _ODOMETRY, i).normal() * jitter if jitter else 0.0
        out.append(out[-1] @ Pose(rel.R, rel.t * global_scale * (1.0 + eps)))
    return out


def _texture(cfg: SimConfig, frame: _PlaneFrame, ego_xz: np.ndarray) -> np.ndarray:
    tex = cfg.texture
    # densify the path and extend it straight ahead of the last pose
    last = ego_xz[-1]
    ahead = np.arange(1.0, tex.lookahead + 1.0)
    ext = np.column_stack([last[0] + ahead * math.sin(last[2]), last[1] + ahead * math.cos(last[2])])
    path = np.vstack([ego_xz[:, :2], ext])
    lo = path.min(axis=0) - tex.half_width
    hi = path.max(axis=0) + tex.half_width
    rng = counter_rng(cfg.seed, _TEXTURE)
    count = rng.poisson(tex.density * float(np.prod(hi - lo)))
    pts = rng.uniform(lo, hi, size=(count, 2))
    dist = np.full(count, np.inf)
    for chunk in np.array_split(path, max(1, len(path) // 64)):
        d = np.linalg.norm(pts[:, None, :] - chunk[None, :, :], axis=2).min(axis=1)
        dist = np.minimum(dist, d)
    keep = dist <= tex.half_width
    for vx, vz, r in tex.voids:
        keep &= np.hypot(pts[:, 0] - vx, pts[:, 1] - vz) > r
    pts = pts[keep]
    return frame.point(pts[:, 0], pts[:, 1]).reshape(-1, 3)


def _in_image(px: np.ndarray, size) -> np.ndarray:
    w, h = size
    return (px[:, 0] >= 0) & (px[:, 0] < w) & (px[:, 1] >= 0) & (px[:, 1] < h)


def _project(X: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    return np.column_stack([K.fx * X[:, 0] / X[:, 2] + K.cx, K.fy * X[:, 1] / X[:, 2] + K.cy])


def render_detection(cfg: SimConfig, basis: ShapeBasis, cam: Pose, veh: Pose, track_id: int, frame: int,
                     shape_coeffs: np.ndarray) -> Detection | None:
    K = cfg.intrinsics
    rel = se3.relative(cam, veh)
    X = instantiate_shape(basis, shape_coeffs, rel.R, rel.t)
    contact = se3.transform_point(rel, [0.0, WHEEL_RADIUS, 0.0])
    if np.any(X[:, 2] <= 0.5) or contact[2] > cfg.max_detection_depth:
        return None
    px = _project(X, K)
    visible = _in_image(px, cfg.image_size)
    if visible.sum() < 6:
        return None
    uc, vc = _project(contact[None, :], K)[0]
    half_w = float(np.max(np.abs(px[:, 0] - uc)))
    box = np.array([uc - half_w, float(px[:, 1].min()), uc + half_w, vc])
    noise = cfg.noise
    if noise.bbox_sigma:
        box = box + counter_rng(cfg.seed, _BBOX, frame, track_id).normal(size=4) * noise.bbox_sigma
    if noise.keypoint_sigma:
        px = px + counter_rng(cfg.seed, _KEYPOINTS, frame, track_id).normal(size=px.shape) * noise.keypoint_sigma
    conf = visible.astype(float)
    px = np.where(visible[:, None], px, 0.0)
    return Detection(frame, track_id, BoundingBox(*box), KeypointObservation(px, conf))


def render_correspondences(cfg: SimConfig, features: np.ndarray, cam_prev: Pose, cam_curr: Pose, frame: int) -> np.ndarray:
    K = cfg.intrinsics
    Xp = se3.transform_points(se3.inverse(cam_prev), features)
    Xc = se3.transform_points(se3.inverse(cam_curr), features)
    ok = (Xp[:, 2] > 1.0) & (Xc[:, 2] > 1.0) & (Xp[:, 2] < cfg.max_feature_depth) & (Xc[:, 2] < cfg.max_feature_depth)
    Xp, Xc = Xp[ok], Xc[ok]
    pp, pc = _project(Xp, K), _project(Xc, K)
    ok = _in_image(pp, cfg.image_size) & _in_image(pc, cfg.image_size)
    rows = np.hstack([pp[ok], pc[ok]])
    if cfg.noise.correspondence_sigma and len(rows):
        rng = counter_rng(cfg.seed, _CORRESPONDENCES, frame)
        rows = rows + rng.normal(size=rows.shape) * cfg.noise.correspondence_sigma
    # keep pixels strictly below the horizon after noise
    horizon = K.cy + 1.0
    rows = rows[(rows[:, 1] > horizon) & (rows[:, 3] > horizon)]
    return rows


def generate(cfg: SimConfig, basis: ShapeBasis | None = None) -> SimScene:
    basis = template_basis() if basis is None else basis
    frame = _PlaneFrame(cfg.plane)
    n = cfg.frame_count

    ego_xz = integrate_unicycle(cfg.ego, n, cfg.dt)
    ego = [Pose(frame.heading_rotation(yaw), frame.point(x, z, lift=cfg.plane.height)) for x, z, yaw in ego_xz]
    # frame 0 is the world frame by construction; pin it exactly
    ego[0] = Pose.identity()

    tracks: dict[int, list[Pose]] = {}
    detections: list[Detection] = []
    for v in cfg.vehicles:
        states = integrate_unicycle(v, n, cfg.dt)
        tracks[v.track_id] = [
            Pose(frame.heading_rotation(yaw), frame.point(x, z, lift=WHEEL_RADIUS)) for x, z, yaw in states
        ]
    for f in range(n):
        for v in cfg.vehicles:
            coeffs = np.zeros(basis.B)
            coeffs[: len(v.shape)] = v.shape
            det = render_detection(cfg, basis, ego[f], tracks[v.track_id][f], v.track_id, f, coeffs)
            if det is not None:
                detections.append(det)

    features = _texture(cfg, frame, ego_xz)
    corr = {(f - 1, f): render_correspondences(cfg, features, ego[f - 1], ego[f], f) for f in range(1, n)}
    odometry = corrupt_odometry(ego, cfg.noise.odometry_scale, cfg.noise.odometry_jitter, cfg.seed)
    return SimScene(cfg, basis, ego, tracks, detections, corr, odometry, features)


# Presets -------------------------------------------------------------------

STANDARD_NOISE = NoiseConfig(
    keypoint_sigma=1.0, bbox_sigma=0.5, correspondence_sigma=0.5, odometry_scale=0.5, odometry_jitter=0.01
)
ZERO_NOISE = NoiseConfig(odometry_scale=0.5)


def _highway_vehicles() -> tuple[AgentProfile, ...]:
    return (
        AgentProfile(track_id=1, x=-3.5, z=14.0, speed=10.5),
        AgentProfile(track_id=2, x=3.5, z=36.0, speed=11.2),
    )


def _lane_change() -> AgentProfile:
    return AgentProfile(speed=10.0, yaw_schedule=((30, 0.05), (50, -0.05), (70, 0.0)))


def standard(seed: int = 0, frames: int = 100, noise: NoiseConfig = STANDARD_NOISE) -> SimConfig:
    """Ego changing lanes at 10 m/s with a near and a far vehicle ahead."""
    return SimConfig(frame_count=frames, ego=_lane_change(), vehicles=_highway_vehicles(), noise=noise,
                     seed=seed, name="standard")


def zero_noise(seed: int = 0, frames: int = 100) -> SimConfig:
    return replace(standard(seed, frames, ZERO_NOISE), name="zero-noise")


def straight(seed: int = 0, frames: int = 100, noise: NoiseConfig = STANDARD_NOISE) -> SimConfig:
    """Straight road with dense near-field ground texture; no vehicles."""
    return SimConfig(frame_count=frames, ego=AgentProfile(speed=10.0), noise=noise, seed=seed, name="straight")


INTERSECTION_NOISE = replace(STANDARD_NOISE, odometry_jitter=0.05)


def intersection(seed: int = 0, frames: int = 100, noise: NoiseConfig = INTERSECTION_NOISE) -> SimConfig:
    """Right turn through a featureless intersection; near-field ground features are sparse during the turn."""
    speed, rate = 8.0, 0.5
    turn_start = 30
    turn_frames = int(round((math.pi / 2) / rate / 0.1))
    ego = AgentProfile(speed=speed, yaw_schedule=((turn_start, rate), (turn_start + turn_frames, 0.0)))
    # intersection box centred on the turning arc
    radius = speed / rate
    z0 = speed * 0.1 * turn_start
    cx, cz = radius * (1 - math.cos(math.pi / 4)), z0 + radius * math.sin(math.pi / 4)
    tex = GroundTexture(voids=((cx, cz, 14.0),))
    return SimConfig(frame_count=frames, ego=ego, noise=noise, texture=tex, seed=seed, name="intersection")


PRESETS = {"standard": standard, "zero-noise": zero_noise, "straight": straight, "intersection": intersection}
