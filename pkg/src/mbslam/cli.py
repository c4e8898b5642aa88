"""Command-line entry point: simulate, run, evaluate, sweep-threshold, ablate.

Exit codes: 0 success, 1 unreadable or malformed input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import formats, pipeline, sim
from .errors import MBSlamError, ParseError
from .metrics import ate_rmse_frames, path_length, percentage_error

log = logging.getLogger("mbslam")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise ParseError("--set", 0, f"expected KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for flag in ("output_dir", "depth_threshold", "max_iterations", "edges"):
        v = getattr(args, flag, None)
        if v is not None:
            out[flag] = str(v)
    if getattr(args, "plot", False):
        out["plot"] = "true"
    return out


def _load_config(args) -> config_mod.RunConfig:
    return config_mod.load(args.config, _overrides(args))


def write_scene(scene: sim.SimScene, out: Path) -> Path:
    """Write a simulated scene in the pipeline input formats plus a run config; returns the config path."""
    out.mkdir(parents=True, exist_ok=True)
    formats.write_poses(out / "odometry.txt", scene.odometry)
    formats.write_detections(out / "detections.txt", scene.detections)
    formats.write_correspondences(out / "correspondences.txt", scene.correspondences)
    formats.write_basis(out / "basis.txt", scene.basis)
    formats.write_poses(out / "gt_camera.txt", scene.ego_truth)
    formats.write_track_poses(out / "gt_tracks.txt", scene.track_truth_observed())
    cfg = config_mod.RunConfig(
        odometry=out / "odometry.txt",
        detections=out / "detections.txt",
        correspondences=out / "correspondences.txt",
        basis=out / "basis.txt",
        gt_camera=out / "gt_camera.txt",
        gt_tracks=out / "gt_tracks.txt",
        output_dir=out / "results",
        intrinsics=scene.config.intrinsics,
        plane=scene.config.plane,
        name=f"{scene.config.name}-seed{scene.config.seed}",
    )
    path = out / "run.cfg"
    config_mod.write(path, cfg, relative_to=out)
    return path


def cmd_simulate(args) -> int:
    cfg = sim.PRESETS[args.preset](seed=args.seed, frames=args.frames)
    path = write_scene(sim.generate(cfg), Path(args.out))
    print(path)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args)
    report = pipeline.run_pipeline(cfg)
    for row in report["trajectories"]:
        pct = "n/a" if row["pct_error"] is None else f"{row['pct_error']:.3f}%"
        print(f"{row['condition']:>15}  {row['body']:<12} frames={row['frames']:<4} ATE={row['ate_m']:.4f} m  {pct}")
    print(f"outputs in {cfg.output_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    est = formats.read_poses(args.estimate)
    gt = formats.read_poses(args.truth)
    est_map = {f: p for f, p in enumerate(est) if p is not None}
    gt_map = {f: p for f, p in enumerate(gt) if p is not None}
    ate = ate_rmse_frames(est_map, gt_map)
    length = path_length([gt_map[f] for f in sorted(est_map)])
    out = {"frames": len(est_map), "ate_m": ate, "path_length_m": length}
    try:
        out["pct_error"] = percentage_error(ate, length, args.initial_depth)
    except ZeroDivisionError:
        out["pct_error"] = None
    print(json.dumps(out, indent=2))
    return EXIT_OK


def _parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _sequences(args):
    seqs = {}
    for path in args.config or []:
        cfg = config_mod.load(path)
        inputs, truth = pipeline.load_inputs(cfg)
        if truth is None:
            raise ParseError(path, 0, "sweep needs gt_camera")
        seqs[cfg.name if cfg.name != "run" else Path(path).stem] = (inputs, truth)
    if args.preset:
        for seed in range(args.seeds):
            scene = sim.generate(sim.PRESETS[args.preset](seed=seed, frames=args.frames))
            seqs[f"{args.preset}-{seed}"] = pipeline.inputs_from_scene(scene)
    if not seqs:
        raise ParseError("<args>", 0, "give --config files or --preset")
    return seqs


def cmd_sweep(args) -> int:
    thresholds = _parse_floats(args.thresholds)
    seqs = {name: (inputs, truth.camera) for name, (inputs, truth) in _sequences(args).items()}
    rows = pipeline.sweep_threshold(seqs, thresholds)
    text = pipeline.sweep_csv(rows, thresholds)
    if args.out:
        formats.write_text_atomic(Path(args.out), text)
    print(text, end="")
    return EXIT_OK


def cmd_ablate(args) -> int:
    base = config_mod.load(args.config, _overrides(args)) if args.config else config_mod.RunConfig()
    seqs = {}
    if args.config:
        seqs[base.name] = pipeline.load_inputs(base)
    if args.preset:
        for seed in range(args.seeds):
            scene = sim.generate(sim.PRESETS[args.preset](seed=seed, frames=args.frames))
            seqs[f"{args.preset}-{seed}"] = pipeline.inputs_from_scene(scene)
    if not seqs:
        raise ParseError("<args>", 0, "give --config or --preset")
    rows = []
    for name, (inputs, truth) in seqs.items():
        if truth is None:
            raise ParseError(name, 0, "ablation needs ground truth")
        res = pipeline.run_inputs(inputs, base, truth, pipeline.CONDITIONS)
        rows += [dict(r, sequence=name) for r in res.rows]
    summary = pipeline.ablation_summary(rows)
    text = pipeline.ablation_csv(summary)
    out = Path(args.output_dir) if args.output_dir else Path(base.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_text_atomic(out / "ablation.csv", text)
    report = {"trajectories": rows, "summary": summary, "config_echo": base.echo(), "timings": None}
    formats.write_text_atomic(out / "ablation.json", pipeline.dumps_report(report))
    print(text, end="")
    return EXIT_OK


def _add_run_flags(p):
    p.add_argument("--config", required=True, help="key = value run configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry (repeatable)")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--depth-threshold", dest="depth_threshold", type=float)
    p.add_argument("--max-iterations", dest="max_iterations", type=int)
    p.add_argument("--edges", help="kept edge categories, e.g. CC,CV,VV")
    p.add_argument("--plot", action="store_true", help="also write a top-down SVG")


def _add_sim_source(p, default_preset=None):
    p.add_argument("--preset", choices=sorted(sim.PRESETS), default=default_preset)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--frames", type=int, default=100)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mbslam", description="Monocular multi-body SLAM on a planar road scene.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a synthetic scene into input files")
    p.add_argument("--preset", choices=sorted(sim.PRESETS), default="standard")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run the full pipeline from a config file")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="ATE and percentage error of a pose file against ground truth")
    p.add_argument("--estimate", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--initial-depth", dest="initial_depth", type=float, default=0.0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-threshold", help="ego ATE for several correspondence depth thresholds")
    p.add_argument("--config", action="append", help="run config with gt_camera (repeatable)")
    _add_sim_source(p)
    p.add_argument("--thresholds", default="12,15,18,20")
    p.add_argument("--out", help="CSV path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="optimize with each subset of edge categories")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--output-dir", dest="output_dir")
    _add_sim_source(p)
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ParseError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (MBSlamError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
