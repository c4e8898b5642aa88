"""Flat ``key = value`` run configuration.

Relative paths resolve against the directory of the config file. Values
given on the command line override those in the file.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

from .errors import ParseError
from .ground import DEFAULT_DEPTH_THRESHOLD, CameraIntrinsics, GroundPlane
from .posegraph import ALL_CATEGORIES, Category, ConfidenceConfig

PATH_KEYS = ("odometry", "detections", "correspondences", "basis", "gt_camera", "gt_tracks", "output_dir")
FLOAT_KEYS = ("fx", "fy", "cx", "cy", "camera_height", "depth_threshold", "wheel_radius") + tuple(
    f.name for f in fields(ConfidenceConfig)
)
INT_KEYS = ("max_iterations",)
BOOL_KEYS = ("plot", "timings")
OTHER_KEYS = ("plane_normal", "edges", "name")
KNOWN_KEYS = PATH_KEYS + FLOAT_KEYS + INT_KEYS + BOOL_KEYS + OTHER_KEYS


@dataclass(frozen=True)
class RunConfig:
    odometry: Path | None = None
    detections: Path | None = None
    correspondences: Path | None = None
    basis: Path | None = None  # built-in template when unset
    gt_camera: Path | None = None
    gt_tracks: Path | None = None
    output_dir: Path = Path("out")
    intrinsics: CameraIntrinsics = CameraIntrinsics(721.5377, 721.5377, 609.5593, 172.854)
    plane: GroundPlane = GroundPlane()
    depth_threshold: float = DEFAULT_DEPTH_THRESHOLD
    confidence: ConfidenceConfig = ConfidenceConfig()
    max_iterations: int = 100
    wheel_radius: float = 0.33
    edges: frozenset = ALL_CATEGORIES
    plot: bool = False
    timings: bool = False
    name: str = "run"

    def __post_init__(self):
        if not self.depth_threshold > 0:
            raise ValueError("depth_threshold must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")

    def check_inputs(self) -> None:
        for key in ("odometry", "detections", "correspondences", "basis", "gt_camera", "gt_tracks"):
            p = getattr(self, key)
            if p is not None and not Path(p).is_file():
                raise FileNotFoundError(f"{key}: {p} does not exist")
        for key in ("odometry", "detections", "correspondences"):
            if getattr(self, key) is None:
                raise ValueError(f"config is missing '{key}'")

    def echo(self) -> dict[str, str]:
        """String form of every setting, sorted by key, for reports."""
        return dict(sorted(to_mapping(self).items()))


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def read_mapping(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(path, lineno, "expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in KNOWN_KEYS:
                raise ParseError(path, lineno, f"unknown key {key!r}")
            if key in out:
                raise ParseError(path, lineno, f"duplicate key {key!r}")
            out[key] = value
    return out


def from_mapping(values: Mapping[str, str], base_dir: Path | None = None, start: RunConfig | None = None) -> RunConfig:
    cfg = RunConfig() if start is None else start
    unknown = set(values) - set(KNOWN_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    updates: dict = {}
    K = {k: getattr(cfg.intrinsics, k) for k in ("fx", "fy", "cx", "cy")}
    plane_n, plane_h = tuple(cfg.plane.n), cfg.plane.height
    conf = {f.name: getattr(cfg.confidence, f.name) for f in fields(ConfidenceConfig)}
    for key, value in values.items():
        if key in PATH_KEYS:
            p = Path(value).expanduser()
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            updates[key] = p
        elif key in ("fx", "fy", "cx", "cy"):
            K[key] = float(value)
        elif key == "camera_height":
            plane_h = float(value)
        elif key == "plane_normal":
            parts = value.replace(",", " ").split()
            if len(parts) != 3:
                raise ValueError("plane_normal needs three components")
            plane_n = tuple(float(v) for v in parts)
        elif key in conf:
            conf[key] = float(value)
        elif key in ("depth_threshold", "wheel_radius"):
            updates[key] = float(value)
        elif key in INT_KEYS:
            updates[key] = int(value)
        elif key in BOOL_KEYS:
            updates[key] = _parse_bool(value)
        elif key == "edges":
            cats = [c.strip().upper() for c in value.replace("+", ",").split(",") if c.strip()]
            updates[key] = frozenset(Category(c) for c in cats)
            if not updates[key]:
                raise ValueError("edges needs at least one category")
        elif key == "name":
            updates[key] = value
    updates["intrinsics"] = CameraIntrinsics(**K)
    updates["plane"] = GroundPlane(plane_n, plane_h)
    updates["confidence"] = ConfidenceConfig(**conf)
    return replace(cfg, **updates)


def load(path, overrides: Mapping[str, str] | None = None) -> RunConfig:
    """Config file plus command-line overrides (overrides win; their paths resolve against the cwd)."""
    path = Path(path)
    try:
        cfg = from_mapping(read_mapping(path), base_dir=path.parent)
    except ParseError:
        raise
    except ValueError as exc:
        raise ParseError(path, 0, str(exc)) from None
    if overrides:
        cfg = from_mapping(overrides, base_dir=None, start=cfg)
    return cfg


def to_mapping(cfg: RunConfig) -> dict[str, str]:
    out: dict[str, str] = {}
    for key in PATH_KEYS:
        v = getattr(cfg, key)
        if v is not None:
            out[key] = str(v)
    for key in ("fx", "fy", "cx", "cy"):
        out[key] = repr(float(getattr(cfg.intrinsics, key)))
    out["plane_normal"] = " ".join(repr(float(v)) for v in cfg.plane.n)
    out["camera_height"] = repr(float(cfg.plane.height))
    for f in fields(ConfidenceConfig):
        out[f.name] = repr(float(getattr(cfg.confidence, f.name)))
    out["depth_threshold"] = repr(float(cfg.depth_threshold))
    out["wheel_radius"] = repr(float(cfg.wheel_radius))
    out["max_iterations"] = str(cfg.max_iterations)
    out["edges"] = ",".join(sorted(c.value for c in cfg.edges))
    out["plot"] = str(cfg.plot).lower()
    out["timings"] = str(cfg.timings).lower()
    out["name"] = cfg.name
    return out


def write(path, cfg: RunConfig, relative_to: Path | None = None) -> None:
    """Write ``cfg``; with ``relative_to``, paths under that directory are stored relative to it."""
    m = to_mapping(cfg)
    if relative_to is not None:
        for key in PATH_KEYS:
            if key in m:
                try:
                    m[key] = str(Path(m[key]).relative_to(relative_to))
                except ValueError:
                    pass
    with open(path, "w") as fh:
        for k, v in m.items():
            fh.write(f"{k} = {v}\n")
