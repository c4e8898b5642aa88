"""Single-view metrology on a known ground plane.

The plane is written ``n . X = -h`` in camera coordinates, with ``n`` the
upward unit normal. For a level camera in the KITTI frame (y down) that is
``n = (0, -1, 0)`` and the ground sits at ``y = +h``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import HorizonDegenerateError, NegativeDepthError

HORIZON_EPS = 1e-9
DEFAULT_DEPTH_THRESHOLD = 12.0


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def back_project(self, pixel) -> np.ndarray:
        """``K^-1 [u, v, 1]``, the viewing ray with unit z."""
        u, v = pixel
        return np.array([(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0])


@dataclass(frozen=True)
class GroundPlane:
    normal: tuple[float, float, float] = (0.0, -1.0, 0.0)
    height: float = 1.65

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ValueError("plane normal must be nonzero")
        if not self.height > 0:
            raise ValueError(f"camera height must be positive, got {self.height}")
        object.__setattr__(self, "normal", tuple(float(x) for x in n / norm))

    @property
    def n(self) -> np.ndarray:
        return np.asarray(self.normal)

    def signed_offset(self, X) -> float:
        """``n . X + h``; zero for points on the plane."""
        return float(self.n @ np.asarray(X, dtype=float) + self.height)


@dataclass(frozen=True)
class BoundingBox:
    u_min: float
    v_min: float
    u_max: float
    v_max: float

    def __post_init__(self):
        if not (self.u_min < self.u_max and self.v_min < self.v_max):
            raise ValueError(f"malformed bounding box {self}")

    @property
    def bottom_center(self) -> tuple[float, float]:
        return (0.5 * (self.u_min + self.u_max), self.v_max)


def lift_ground_pixel(K: CameraIntrinsics, plane: GroundPlane, pixel) -> np.ndarray:
    """Intersect the ray through ``pixel`` with the ground plane.

    Returns ``X = -h K^-1 x / (n . K^-1 x)``.
    """
    ray = K.back_project(pixel)
    denom = float(plane.n @ ray)
    if abs(denom) < HORIZON_EPS:
        raise HorizonDegenerateError(f"pixel {tuple(pixel)} lies on the horizon")
    X = -plane.height * ray / denom
    if X[2] <= 0:
        raise NegativeDepthError(f"pixel {tuple(pixel)} meets the plane behind the camera (z={X[2]:.3g})")
    return X


def lift_ground_pixels(K: CameraIntrinsics, plane: GroundPlane, pixels) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized lift of an (N, 2) pixel array.

    Returns ``(points, ok)``; rows with ``ok == False`` are at/above the
    horizon or behind the camera and hold NaN.
    """
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    rays = np.column_stack(
        [(pixels[:, 0] - K.cx) / K.fx, (pixels[:, 1] - K.cy) / K.fy, np.ones(len(pixels))]
    )
    denom = rays @ plane.n
    ok = np.abs(denom) >= HORIZON_EPS
    X = np.full_like(rays, np.nan)
    X[ok] = -plane.height * rays[ok] / denom[ok, None]
    ok &= X[:, 2] > 0
    X[~ok] = np.nan
    return X, ok


def filter_by_depth(points, threshold: float = DEFAULT_DEPTH_THRESHOLD) -> list:
    """Keep points whose z is within ``threshold`` (inclusive), preserving order."""
    if not threshold > 0:
        raise ValueError(f"depth threshold must be positive, got {threshold}")
    return [p for p in points if p[2] <= threshold]


def vehicle_position_from_bbox(K: CameraIntrinsics, plane: GroundPlane, bbox: BoundingBox) -> np.ndarray:
    """Ground contact point of a detection: the lifted bottom-edge midpoint."""
    return lift_ground_pixel(K, plane, bbox.bottom_center)
