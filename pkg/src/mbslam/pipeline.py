"""End-to-end run: metric odometry, vehicle localization, graph build, optimization, evaluation."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import formats, se3
from .builder import FrameMeasurements, TrackMeasurement, build, ground_origin
from .config import RunConfig
from .errors import BehindCameraError, GroundMetrologyError, InsufficientKeypointsError
from .formats import Detection
from .ground import CameraIntrinsics, GroundPlane, lift_ground_pixels, vehicle_position_from_bbox
from .metrics import ate_rmse_frames, path_length, percentage_error
from .posegraph import ALL_CATEGORIES, Category, MultiPoseGraph, ablate_edges, dump_graph, optimize
from .scale import recover_scales, chain
from .se3 import Pose
from .shape import ShapeBasis, ShapeFit, fit, template_basis, vehicle_pose_from_fit

log = logging.getLogger(__name__)

EGO = "ego"
INITIALIZATION = "initialization"

# ablation conditions: label -> kept edge categories
CONDITIONS: dict[str, frozenset] = {
    "CC+CV": frozenset({Category.CC, Category.CV}),
    "CC+VV": frozenset({Category.CC, Category.VV}),
    "CV+VV": frozenset({Category.CV, Category.VV}),
    "CC+CV+VV": ALL_CATEGORIES,
}
FULL = "CC+CV+VV"


def condition_label(edges: Iterable) -> str:
    order = [Category.CC, Category.CV, Category.VV]
    cats = set(Category(e) for e in edges)
    return "+".join(c.value for c in order if c in cats)


def vehicle_body(track: int) -> str:
    return f"vehicle_{track}"


@dataclass(eq=False)
class PipelineInputs:
    odometry: list[Pose]
    detections: list[Detection]
    correspondences: Mapping[tuple[int, int], np.ndarray]
    intrinsics: CameraIntrinsics
    plane: GroundPlane = GroundPlane()
    basis: ShapeBasis = field(default_factory=template_basis)

    @property
    def frame_count(self) -> int:
        return len(self.odometry)


@dataclass(eq=False)
class GroundTruth:
    camera: list[Pose]
    tracks: dict[int, dict[int, Pose]]


@dataclass(eq=False)
class Localization:
    measurements: list[FrameMeasurements]
    fits: dict[tuple[int, int], ShapeFit]
    failures: list[tuple[int, int, str]]  # (track, frame, reason)


# Stages -------------------------------------------------------------------


def lift_correspondences(rows: np.ndarray | None, K: CameraIntrinsics, plane: GroundPlane):
    """Pixel pairs -> (prev, curr) ground points, dropping rows at or above the horizon."""
    if rows is None or len(rows) == 0:
        return np.zeros((0, 3)), np.zeros((0, 3))
    rows = np.asarray(rows, dtype=float).reshape(-1, 4)
    Xp, okp = lift_ground_pixels(K, plane, rows[:, :2])
    Xc, okc = lift_ground_pixels(K, plane, rows[:, 2:])
    ok = okp & okc
    return Xp[ok], Xc[ok]


def metric_camera_trajectory(inputs: PipelineInputs, depth_threshold: float):
    n = inputs.frame_count
    per_step = [
        lift_correspondences(inputs.correspondences.get((i, i + 1)), inputs.intrinsics, inputs.plane)
        for i in range(n - 1)
    ]
    steps = recover_scales(inputs.odometry, per_step, depth_threshold)
    return chain([s.relative_pose for s in steps]), steps


def _yaw_candidates(plane: GroundPlane, count: int = 4) -> list[np.ndarray]:
    R0 = se3.yaw_about(plane.n, [0.0, 0.0, 1.0])
    return [se3.so3_exp(-plane.n * (2 * math.pi * i / count)) @ R0 for i in range(count)]


def localize_vehicles(inputs: PipelineInputs, cameras: Sequence[Pose], wheel_radius: float = 0.33) -> Localization:
    """Ground-plane and shape-prior localizations for every detection.

    A track's first fit (or first after a gap) tries several headings; later
    fits start from the previous frame's solution, re-centred on the
    bounding-box ground position.
    """
    K, plane, basis = inputs.intrinsics, inputs.plane, inputs.basis
    by_frame: dict[int, dict[int, Detection]] = {}
    for d in inputs.detections:
        if not 0 <= d.frame < inputs.frame_count:
            raise ValueError(f"detection frame {d.frame} outside 0..{inputs.frame_count - 1}")
        by_frame.setdefault(d.frame, {})[d.track_id] = d

    fits: dict[tuple[int, int], ShapeFit] = {}
    failures: list[tuple[int, int, str]] = []
    measurements = []
    for f in range(inputs.frame_count):
        tracks: dict[int, TrackMeasurement] = {}
        for tid in sorted(by_frame.get(f, {})):
            det = by_frame[f][tid]
            try:
                contact = vehicle_position_from_bbox(K, plane, det.bbox)
            except GroundMetrologyError as exc:
                failures.append((tid, f, f"ground: {exc}"))
                contact = None
            prev = fits.get((tid, f - 1))
            if contact is not None:
                t0 = ground_origin(contact, plane.n, wheel_radius)
            elif prev is not None:
                t0 = prev.translation
            else:
                t0 = None
            shape_pose = None
            if t0 is not None:
                if prev is not None:
                    inits = [ShapeFit(prev.rotation, t0, prev.coefficients)]
                else:
                    inits = [ShapeFit(R, t0, np.zeros(basis.B)) for R in _yaw_candidates(plane)]
                best = None
                for init in inits:
                    try:
                        res = fit(basis, det.keypoints, K, init)
                    except (InsufficientKeypointsError, BehindCameraError, ValueError) as exc:
                        reason = f"shape: {exc}"
                        continue
                    if best is None or res.loss < best.loss:
                        best = res
                if best is None:
                    failures.append((tid, f, reason))
                else:
                    fits[(tid, f)] = best
                    shape_pose = vehicle_pose_from_fit(basis, best)
            tracks[tid] = TrackMeasurement(shape_pose, contact)
        measurements.append(FrameMeasurements(f, cameras[f], tracks))
    return Localization(measurements, fits, failures)


# Evaluation ---------------------------------------------------------------


def body_trajectories(graph: MultiPoseGraph) -> dict[str, dict[int, Pose]]:
    out = {EGO: graph.trajectory(None)}
    for tid in graph.tracks():
        out[vehicle_body(tid)] = graph.trajectory(tid)
    return out


def evaluate_bodies(estimates: Mapping[str, Mapping[int, Pose]], truth: GroundTruth, condition: str) -> list[dict]:
    rows = []
    for body, est in estimates.items():
        if body == EGO:
            gt = dict(enumerate(truth.camera))
            depth = 0.0
        else:
            tid = int(body.split("_", 1)[1])
            gt = truth.tracks.get(tid, {})
            first = min(est) if est else None
            depth = float(se3.relative(truth.camera[first], gt[first]).t[2]) if first in gt else 0.0
        if not est:
            continue
        frames = sorted(est)
        ate = ate_rmse_frames(est, gt)
        length = path_length([gt[f] for f in frames])
        try:
            pct = percentage_error(ate, length, depth)
        except ZeroDivisionError:
            pct = None
        rows.append({"body": body, "frames": len(frames), "ate_m": ate, "pct_error": pct, "condition": condition})
    return rows


def _mean(xs):
    return math.fsum(xs) / len(xs)


# Runs ---------------------------------------------------------------------


@dataclass(eq=False)
class RunResult:
    initial: MultiPoseGraph
    optimized: dict[str, MultiPoseGraph]
    reports: dict
    rows: list[dict]
    localization: Localization
    timings: dict[str, float]


def run_inputs(
    inputs: PipelineInputs,
    cfg: RunConfig,
    truth: GroundTruth | None = None,
    conditions: Mapping[str, frozenset] | None = None,
) -> RunResult:
    """Run every stage in memory and optimize once per edge condition."""
    conditions = {condition_label(cfg.edges): cfg.edges} if conditions is None else conditions
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    cams, _ = metric_camera_trajectory(inputs, cfg.depth_threshold)
    timings["scale"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    loc = localize_vehicles(inputs, cams, cfg.wheel_radius)
    timings["localize"] = time.perf_counter() - t0
    for tid, f, reason in loc.failures:
        log.info("track %d frame %d: %s", tid, f, reason)
    built = build(loc.measurements, cfg.confidence, inputs.plane, wheel_radius=cfg.wheel_radius)
    graph = built.graph

    optimized: dict[str, MultiPoseGraph] = {}
    reports: dict = {}
    rows: list[dict] = []
    if truth is not None:
        rows += evaluate_bodies(body_trajectories(graph), truth, INITIALIZATION)
    t0 = time.perf_counter()
    for label, keep in conditions.items():
        g = graph if set(keep) == set(ALL_CATEGORIES) else ablate_edges(graph, keep)
        res = optimize(g, cfg.max_iterations)
        optimized[label] = res.graph
        reports[label] = res.report
        if truth is not None:
            rows += evaluate_bodies(body_trajectories(res.graph), truth, label)
    timings["optimize"] = time.perf_counter() - t0
    return RunResult(graph, optimized, reports, rows, loc, timings)


def report_dict(result: RunResult, cfg: RunConfig) -> dict:
    optim = {
        label: {
            "status": r.status,
            "iterations": r.iterations,
            "initial_cost": r.initial_cost,
            "final_cost": r.final_cost,
        }
        for label, r in result.reports.items()
    }
    return {
        "trajectories": result.rows,
        "optimization": optim,
        "graph": result.initial.counts(),
        "localization_failures": [list(x) for x in result.localization.failures],
        "config_echo": cfg.echo(),
        "timings": result.timings if cfg.timings else None,
    }


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=False, allow_nan=True) + "\n"


def _write_body(path: Path, traj: Mapping[int, Pose], n: int) -> None:
    formats.write_poses(path, [traj.get(f) for f in range(n)])


def load_inputs(cfg: RunConfig) -> tuple[PipelineInputs, GroundTruth | None]:
    cfg.check_inputs()
    basis = formats.read_basis(cfg.basis) if cfg.basis is not None else template_basis()
    odom = formats.read_poses(cfg.odometry)
    if any(p is None for p in odom):
        raise ValueError(f"{cfg.odometry}: odometry must have a pose for every frame")
    inputs = PipelineInputs(
        odometry=odom,
        detections=formats.read_detections(cfg.detections, basis.k),
        correspondences=formats.read_correspondences(cfg.correspondences),
        intrinsics=cfg.intrinsics,
        plane=cfg.plane,
        basis=basis,
    )
    truth = None
    if cfg.gt_camera is not None:
        cam = formats.read_poses(cfg.gt_camera)
        if len(cam) != len(odom) or any(p is None for p in cam):
            raise ValueError(f"{cfg.gt_camera}: need one ground-truth pose per odometry frame")
        tracks = formats.read_track_poses(cfg.gt_tracks) if cfg.gt_tracks is not None else {}
        truth = GroundTruth(cam, tracks)
    return inputs, truth


def write_outputs(result: RunResult, cfg: RunConfig, n_frames: int, truth: GroundTruth | None = None) -> dict:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    label = next(iter(result.optimized))
    final = result.optimized[label]
    for body, traj in body_trajectories(final).items():
        _write_body(out / f"{body}.txt", traj, n_frames)
    for body, traj in body_trajectories(result.initial).items():
        _write_body(out / f"{body}_init.txt", traj, n_frames)
    formats.write_text_atomic(out / "graph.txt", dump_graph(final))
    report = report_dict(result, cfg)
    formats.write_text_atomic(out / "report.json", dumps_report(report))
    if cfg.plot:
        from .plot import trajectories_svg

        gt = None
        if truth is not None:
            gt = {EGO: dict(enumerate(truth.camera))}
            gt.update({vehicle_body(t): seq for t, seq in truth.tracks.items()})
        formats.write_text_atomic(out / "trajectories.svg", trajectories_svg(body_trajectories(final), gt))
    return report


def run_pipeline(cfg: RunConfig) -> dict:
    inputs, truth = load_inputs(cfg)
    result = run_inputs(inputs, cfg, truth)
    return write_outputs(result, cfg, inputs.frame_count, truth)


# Threshold sweep ----------------------------------------------------------

SWEEP_NOTE = "ego ATE (m) on synthetic sequences; not comparable with results on real driving data"


def ego_ate_for_threshold(inputs: PipelineInputs, truth_camera: Sequence[Pose], threshold: float) -> float:
    cams, _ = metric_camera_trajectory(inputs, threshold)
    return ate_rmse_frames(dict(enumerate(cams)), dict(enumerate(truth_camera)))


def sweep_threshold(
    sequences: Mapping[str, tuple[PipelineInputs, Sequence[Pose]]], thresholds: Sequence[float]
) -> list[list]:
    """Rows ``[name, ate(T1), ate(T2), ...]`` per sequence plus an ``average`` row."""
    if not thresholds:
        raise ValueError("need at least one threshold")
    rows = []
    for name, (inputs, gt) in sequences.items():
        rows.append([name] + [ego_ate_for_threshold(inputs, gt, T) for T in thresholds])
    rows.append(["average"] + [_mean([r[i + 1] for r in rows]) for i in range(len(thresholds))])
    return rows


def sweep_csv(rows: list[list], thresholds: Sequence[float]) -> str:
    head = ["sequence"] + [f"T={T:g}" for T in thresholds]
    lines = [f"# {SWEEP_NOTE}", ",".join(head)]
    for r in rows:
        lines.append(",".join([str(r[0])] + [f"{v:.6f}" for v in r[1:]]))
    return "\n".join(lines) + "\n"


# Ablation -----------------------------------------------------------------

ABLATION_ORDER = (INITIALIZATION, "CC+CV", "CC+VV", "CV+VV", FULL)


def ablation_summary(rows: Iterable[dict]) -> dict[str, dict[str, float]]:
    """Mean ATE per condition and body, plus the per-condition mean over bodies (``average``)."""
    acc: dict[str, dict[str, list[float]]] = {}
    for r in rows:
        acc.setdefault(r["condition"], {}).setdefault(r["body"], []).append(r["ate_m"])
    out = {}
    for cond in sorted(acc, key=lambda c: ABLATION_ORDER.index(c) if c in ABLATION_ORDER else len(ABLATION_ORDER)):
        per_body = {b: _mean(v) for b, v in sorted(acc[cond].items())}
        per_body["average"] = _mean(list(per_body.values()))
        out[cond] = per_body
    return out


def ablation_csv(summary: Mapping[str, Mapping[str, float]]) -> str:
    bodies = sorted({b for v in summary.values() for b in v if b != "average"}, key=lambda b: (b != EGO, b))
    lines = [",".join(["condition"] + bodies + ["average"])]
    for cond, vals in summary.items():
        lines.append(",".join([cond] + [f"{vals.get(b, float('nan')):.6f}" for b in bodies + ["average"]]))
    return "\n".join(lines) + "\n"


# Simulated scenes ---------------------------------------------------------


def inputs_from_scene(scene) -> tuple[PipelineInputs, GroundTruth]:
    cfg = scene.config
    inputs = PipelineInputs(
        odometry=list(scene.odometry),
        detections=list(scene.detections),
        correspondences=dict(scene.correspondences),
        intrinsics=cfg.intrinsics,
        plane=cfg.plane,
        basis=scene.basis,
    )
    return inputs, GroundTruth(list(scene.ego_truth), scene.track_truth_observed())
