"""Text file formats read and written by the pipeline.

Pose files (KITTI odometry style)
    One line per frame, 12 floats: the row-major 3x4 matrix ``[R | t]``
    mapping body coordinates to world coordinates. A frame without an
    estimate is written as 12 ``nan`` tokens. Blank lines and ``#`` comments
    are skipped.

Track pose files
    ``frame track_id`` followed by the 12 pose floats, one line per
    observed track-frame.

Detections
    ``frame track_id u_min v_min u_max v_max`` then ``k`` triples
    ``u v confidence``; confidence 0 marks an unobserved keypoint.

Ground correspondences
    A header ``pair <frame_prev> <frame_curr> <count>`` followed by ``count``
    lines ``u_prev v_prev u_curr v_curr``.

Shape basis
    Keyword sections: ``k <int>``, ``B <int>``, ``wheels <idx> ...``, then
    ``mean`` followed by k rows ``x y z`` and ``basis`` followed by 3k rows of
    B floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError
from .ground import BoundingBox
from .se3 import Pose
from .shape import KeypointObservation, ShapeBasis

FLOAT_FMT = "{:.17g}"


@dataclass(frozen=True, eq=False)
class Detection:
    frame: int
    track_id: int
    bbox: BoundingBox
    keypoints: KeypointObservation


def _fmt(values: Iterable[float]) -> str:
    return " ".join(FLOAT_FMT.format(float(v)) for v in values)


def _content_lines(path):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line


def _floats(path, lineno, tokens) -> list[float]:
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(path, lineno, f"non-numeric field ({exc})") from None


def _int(path, lineno, token) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(path, lineno, f"expected an integer, got {token!r}") from None


def pose_to_row(p: Pose | None) -> list[float]:
    if p is None:
        return [math.nan] * 12
    return np.hstack([p.R, p.t[:, None]]).reshape(-1).tolist()


def row_to_pose(values: Sequence[float]) -> Pose | None:
    M = np.asarray(values, dtype=float).reshape(3, 4)
    if np.all(np.isnan(M)):
        return None
    if not np.all(np.isfinite(M)):
        raise ValueError("pose row mixes finite and non-finite values")
    return Pose(M[:, :3], M[:, 3])


def parse_pose_line(line: str, path="<string>", lineno: int = 1) -> Pose | None:
    tokens = line.split()
    if len(tokens) != 12:
        raise ParseError(path, lineno, f"expected 12 values, got {len(tokens)}")
    try:
        return row_to_pose(_floats(path, lineno, tokens))
    except ValueError as exc:
        raise ParseError(path, lineno, str(exc)) from None


def read_poses(path) -> list[Pose | None]:
    return [parse_pose_line(line, path, n) for n, line in _content_lines(path)]


def write_poses(path, poses: Sequence[Pose | None], header: str | None = None) -> None:
    with open(path, "w") as fh:
        if header:
            fh.write(f"# {header}\n")
        for p in poses:
            fh.write(_fmt(pose_to_row(p)) + "\n")


def read_track_poses(path) -> dict[int, dict[int, Pose]]:
    """``{track_id: {frame: pose}}``."""
    out: dict[int, dict[int, Pose]] = {}
    for n, line in _content_lines(path):
        tokens = line.split()
        if len(tokens) != 14:
            raise ParseError(path, n, f"expected frame, track_id and 12 values, got {len(tokens)} fields")
        frame, track = _int(path, n, tokens[0]), _int(path, n, tokens[1])
        pose = parse_pose_line(" ".join(tokens[2:]), path, n)
        if pose is None:
            continue
        if frame in out.setdefault(track, {}):
            raise ParseError(path, n, f"duplicate pose for track {track} frame {frame}")
        out[track][frame] = pose
    return out


def write_track_poses(path, tracks: dict[int, dict[int, Pose]]) -> None:
    rows = sorted((f, tid, p) for tid, seq in tracks.items() for f, p in seq.items())
    with open(path, "w") as fh:
        for f, tid, p in rows:
            fh.write(f"{f} {tid} {_fmt(pose_to_row(p))}\n")


def read_detections(path, k: int | None = None) -> list[Detection]:
    out = []
    seen = set()
    for n, line in _content_lines(path):
        tokens = line.split()
        if len(tokens) < 6 or (len(tokens) - 6) % 3:
            raise ParseError(path, n, f"bad field count {len(tokens)}; expected 6 + 3k")
        kk = (len(tokens) - 6) // 3
        if k is not None and kk != k:
            raise ParseError(path, n, f"{kk} keypoints, basis has {k}")
        frame, track = _int(path, n, tokens[0]), _int(path, n, tokens[1])
        if (frame, track) in seen:
            raise ParseError(path, n, f"duplicate detection for track {track} in frame {frame}")
        seen.add((frame, track))
        vals = _floats(path, n, tokens[2:])
        try:
            bbox = BoundingBox(*vals[:4])
            kp = np.asarray(vals[4:]).reshape(-1, 3)
            obs = KeypointObservation(kp[:, :2], kp[:, 2])
        except ValueError as exc:
            raise ParseError(path, n, str(exc)) from None
        out.append(Detection(frame, track, bbox, obs))
    return out


def write_detections(path, detections: Sequence[Detection]) -> None:
    with open(path, "w") as fh:
        for d in detections:
            b = d.bbox
            kp = np.column_stack([d.keypoints.pixels, d.keypoints.confidences]).reshape(-1)
            fh.write(f"{d.frame} {d.track_id} {_fmt((b.u_min, b.v_min, b.u_max, b.v_max))} {_fmt(kp)}\n")


def read_correspondences(path) -> dict[tuple[int, int], np.ndarray]:
    """``{(frame_prev, frame_curr): (N, 4) array of u_prev v_prev u_curr v_curr}``."""
    out: dict[tuple[int, int], np.ndarray] = {}
    lines = list(_content_lines(path))
    i = 0
    while i < len(lines):
        n, line = lines[i]
        tokens = line.split()
        if tokens[0] != "pair" or len(tokens) != 4:
            raise ParseError(path, n, "expected 'pair <frame_prev> <frame_curr> <count>'")
        key = (_int(path, n, tokens[1]), _int(path, n, tokens[2]))
        count = _int(path, n, tokens[3])
        if key in out:
            raise ParseError(path, n, f"duplicate pair {key}")
        rows = []
        for j in range(count):
            if i + 1 + j >= len(lines):
                raise ParseError(path, n, f"pair {key} declares {count} rows, file ends after {j}")
            m, row = lines[i + 1 + j]
            tok = row.split()
            if len(tok) != 4:
                raise ParseError(path, m, f"expected 4 pixel values, got {len(tok)}")
            rows.append(_floats(path, m, tok))
        out[key] = np.asarray(rows, dtype=float).reshape(-1, 4)
        i += 1 + count
    return out


def write_correspondences(path, pairs: dict[tuple[int, int], np.ndarray]) -> None:
    with open(path, "w") as fh:
        for (a, b), rows in sorted(pairs.items()):
            rows = np.asarray(rows).reshape(-1, 4)
            fh.write(f"pair {a} {b} {len(rows)}\n")
            for r in rows:
                fh.write(_fmt(r) + "\n")


def read_basis(path) -> ShapeBasis:
    lines = list(_content_lines(path))
    header: dict[str, list[str]] = {}
    mean_rows: list[list[float]] = []
    basis_rows: list[list[float]] = []
    section = None
    for n, line in lines:
        tokens = line.split()
        key = tokens[0]
        if key in ("k", "B", "wheels"):
            header[key] = tokens[1:]
            section = None
        elif key in ("mean", "basis"):
            section = key
        elif section == "mean":
            if len(tokens) != 3:
                raise ParseError(path, n, "mean shape rows need 3 values")
            mean_rows.append(_floats(path, n, tokens))
        elif section == "basis":
            basis_rows.append(_floats(path, n, tokens))
        else:
            raise ParseError(path, n, f"unexpected line {line!r}")
    for key in ("k", "B", "wheels"):
        if key not in header:
            raise ParseError(path, 0, f"missing '{key}' entry")
    k = _int(path, 0, header["k"][0])
    B = _int(path, 0, header["B"][0])
    wheels = [_int(path, 0, t) for t in header["wheels"]]
    if len(mean_rows) != k:
        raise ParseError(path, 0, f"expected {k} mean-shape rows, got {len(mean_rows)}")
    if len(basis_rows) != 3 * k or any(len(r) != B for r in basis_rows):
        raise ParseError(path, 0, f"basis must be {3 * k} rows of {B} values")
    try:
        return ShapeBasis(np.array(mean_rows), np.array(basis_rows), tuple(wheels))
    except ValueError as exc:
        raise ParseError(path, 0, str(exc)) from None


def write_basis(path, basis: ShapeBasis) -> None:
    with open(path, "w") as fh:
        fh.write(f"k {basis.k}\nB {basis.B}\n")
        fh.write("wheels " + " ".join(str(i) for i in basis.wheel_indices) + "\n")
        fh.write("mean\n")
        for row in basis.mean_shape:
            fh.write(_fmt(row) + "\n")
        fh.write("basis\n")
        for row in basis.basis:
            fh.write(_fmt(row) + "\n")


def write_text_atomic(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)
