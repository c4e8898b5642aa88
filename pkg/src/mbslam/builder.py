"""Assemble the multi-body pose graph from per-frame measurements.

Each tracked vehicle has two camera-frame localizations per frame: a full
pose from the shape-prior fit and a ground-contact position lifted from its
bounding box. The shape fit seeds the vehicle node and its camera-vehicle
edge. The ground positions, registered through the camera odometry, give the
vehicle-vehicle motion edges.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import se3
from .errors import MissingSourceError
from .ground import GroundPlane
from .posegraph import (
    Category,
    ConfidenceConfig,
    GraphEdge,
    MultiPoseGraph,
    NodeId,
    assign_confidence,
    camera_node,
    vehicle_node,
)
from .se3 import Pose
from .shape import WHEEL_RADIUS

log = logging.getLogger(__name__)

MIN_DISPLACEMENT = 0.05  # m; below this the ground track gives no heading
VV_HEADINGS = ("shape", "displacement")


@dataclass(frozen=True, eq=False)
class TrackMeasurement:
    """Camera-frame localizations of one vehicle in one frame.

    ``ground_position`` is the lifted ground-contact point (metres, camera
    frame); ``shape_pose`` is ``T_v^c`` from the shape-prior fit.
    """

    shape_pose: Pose | None = None
    ground_position: np.ndarray | None = None

    @property
    def depth(self) -> float:
        if self.shape_pose is not None:
            return float(self.shape_pose.t[2])
        if self.ground_position is not None:
            return float(self.ground_position[2])
        return float("nan")


@dataclass(frozen=True, eq=False)
class FrameMeasurements:
    frame: int
    camera_world: Pose
    tracks: Mapping[int, TrackMeasurement] = field(default_factory=dict)


@dataclass(eq=False)
class BuildResult:
    graph: MultiPoseGraph
    skipped: list[tuple[int, int]]  # (track, frame) with no localization source
    chains: dict[int, list[list[int]]]  # per track, runs of consecutive frames


def _runs(frames: Sequence[int]) -> list[list[int]]:
    runs: list[list[int]] = []
    for f in sorted(frames):
        if runs and f == runs[-1][-1] + 1:
            runs[-1].append(f)
        else:
            runs.append([f])
    return runs


def ground_origin(contact, normal, wheel_radius: float = WHEEL_RADIUS) -> np.ndarray:
    """Vehicle origin (wheel-centre height) above a ground-contact point."""
    return np.asarray(contact, dtype=float) + wheel_radius * np.asarray(normal, dtype=float)


def _ground_poses(
    frames: list[int],
    world_origin: dict[int, np.ndarray],
    cams: dict[int, Pose],
    shape_rot: dict[int, np.ndarray | None],
    normal: np.ndarray,
    heading: str = "shape",
) -> dict[int, Pose]:
    """Camera-frame ground-source poses for one chain.

    With ``heading="shape"`` a frame with a shape fit takes that fit's
    orientation, so the ground source contributes position only. Otherwise
    heading follows the world-frame displacement into each frame (out of it
    for the chain's first frame), signed to agree with the shape fit's
    forward axis when one exists. Short displacements fall back to the shape
    fit's orientation, then to the camera's heading.
    """
    out = {}
    for i, f in enumerate(frames):
        if i > 0:
            d = world_origin[f] - world_origin[frames[i - 1]]
        elif len(frames) > 1:
            d = world_origin[frames[1]] - world_origin[f]
        else:
            d = np.zeros(3)
        cam = cams[f]
        if heading == "shape" and shape_rot.get(f) is not None:
            out[f] = Pose(shape_rot[f], cam.inverse().R @ (world_origin[f] - cam.t))
            continue
        n_world = cam.R @ normal
        d_plane = d - (d @ n_world) * n_world
        if shape_rot.get(f) is not None and d_plane @ (cam.R @ shape_rot[f][:, 2]) < 0:
            # position noise can exceed a frame's motion; the shape fit says which way is forward
            d_plane = -d_plane
        if np.linalg.norm(d_plane) >= MIN_DISPLACEMENT:
            R = cam.R.T @ se3.yaw_about(n_world, d_plane)
        elif shape_rot.get(f) is not None:
            R = shape_rot[f]
        else:
            R = se3.yaw_about(normal, [0.0, 0.0, 1.0])
        out[f] = Pose(R, cam.inverse().R @ (world_origin[f] - cam.t))
    return out


def build(
    measurements: Sequence[FrameMeasurements],
    cfg: ConfidenceConfig = ConfidenceConfig(),
    plane: GroundPlane = GroundPlane(),
    *,
    wheel_radius: float = WHEEL_RADIUS,
    vv_heading: str = "shape",
    strict: bool = False,
) -> BuildResult:
    """Pose graph over all frames, ordered by frame then track id.

    Frames must be consecutive integers. A track-frame with neither source
    is skipped (splitting that track's chain) unless ``strict``, which raises
    :class:`MissingSourceError`. ``vv_heading`` picks the orientation of the
    ground-source poses behind the vehicle-vehicle edges: ``"shape"`` uses
    the shape fit where there is one, ``"displacement"`` always uses the
    direction of travel.
    """
    if vv_heading not in VV_HEADINGS:
        raise ValueError(f"vv_heading must be one of {VV_HEADINGS}")
    ms = sorted(measurements, key=lambda m: m.frame)
    if not ms:
        raise ValueError("no frames")
    frames = [m.frame for m in ms]
    if frames != list(range(frames[0], frames[0] + len(frames))):
        raise ValueError("camera poses must cover consecutive frames")
    n = plane.n
    cams = {m.frame: m.camera_world for m in ms}

    nodes: dict[NodeId, Pose] = {}
    edges: list[GraphEdge] = []
    for m in ms:
        nodes[camera_node(m.frame)] = m.camera_world
    for a, b in zip(frames, frames[1:]):
        meas = se3.relative(cams[a], cams[b])
        edges.append(assign_confidence(GraphEdge(camera_node(a), camera_node(b), meas, Category.CC), 0.0, cfg))

    skipped: list[tuple[int, int]] = []
    per_track: dict[int, dict[int, TrackMeasurement]] = {}
    for m in ms:
        for tid in sorted(m.tracks):
            tm = m.tracks[tid]
            if tm.shape_pose is None and tm.ground_position is None:
                if strict:
                    raise MissingSourceError(f"track {tid} frame {m.frame} has no localization source")
                skipped.append((tid, m.frame))
                continue
            per_track.setdefault(tid, {})[m.frame] = tm
    if skipped:
        log.warning("%d track-frames without any localization were skipped", len(skipped))

    chains: dict[int, list[list[int]]] = {}
    vehicle_nodes: list[tuple[int, NodeId, Pose]] = []
    vehicle_edges: list[tuple[int, int, GraphEdge]] = []
    for tid in sorted(per_track):
        obs = per_track[tid]
        chains[tid] = _runs(obs)
        for run in chains[tid]:
            # ground-source world positions; frames lacking one borrow the shape fit's origin
            world_origin = {}
            for f in run:
                tm = obs[f]
                p = ground_origin(tm.ground_position, n, wheel_radius) if tm.ground_position is not None else tm.shape_pose.t
                world_origin[f] = se3.transform_point(cams[f], p)
            shape_rot = {f: None if obs[f].shape_pose is None else obs[f].shape_pose.R for f in run}
            ground = _ground_poses(run, world_origin, cams, shape_rot, n, vv_heading)
            for f in run:
                tm = obs[f]
                local = tm.shape_pose if tm.shape_pose is not None else ground[f]
                v = vehicle_node(tid, f)
                vehicle_nodes.append((f, v, cams[f] @ local))
                cv = GraphEdge(camera_node(f), v, local, Category.CV)
                vehicle_edges.append((f, tid, assign_confidence(cv, tm.depth, cfg)))
            for a, b in zip(run, run[1:]):
                meas = se3.inverse(ground[a]) @ se3.relative(cams[a], cams[b]) @ ground[b]
                vv = GraphEdge(vehicle_node(tid, a), vehicle_node(tid, b), meas, Category.VV)
                vehicle_edges.append((b, tid, assign_confidence(vv, obs[b].depth, cfg)))

    for _, v, pose in sorted(vehicle_nodes, key=lambda x: (x[0], x[1].track)):
        nodes[v] = pose
    order = {Category.CV: 0, Category.VV: 1}
    for _, _, e in sorted(vehicle_edges, key=lambda x: (x[0], x[1], order[x[2].category])):
        edges.append(e)
    graph = MultiPoseGraph(nodes, edges, camera_node(frames[0]))
    return BuildResult(graph, skipped, chains)
