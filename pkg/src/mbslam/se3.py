"""SO(3)/SE(3) arithmetic.

Poses map points from a body frame into a parent frame: ``x_parent = R @ x_body + t``.
Twists are 6-vectors ordered rotation first, ``(w1, w2, w3, v1, v2, v3)``, and
every tangent-space quantity in the package (residuals, Jacobians, updates)
uses that order.

Frames follow the KITTI camera convention: x right, y down, z forward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRotationError

SMALL_ANGLE = 1e-6
# Jacobian coefficients lose precision to cancellation well above SMALL_ANGLE.
_JAC_SMALL_ANGLE = 1e-2
_ORTHO_TOL = 1e-7
_CUT_LOCUS_TOL = 1e-9


def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix such that ``hat(w) @ x == cross(w, x)``."""
    return np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]], dtype=float
    )


def vee(W: np.ndarray) -> np.ndarray:
    return np.array([W[2, 1], W[0, 2], W[1, 0]], dtype=float)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Closest rotation matrix in the Frobenius sense (polar projection)."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform in SE(3). Immutable; ``a @ b`` composes."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float).reshape(3, 3)
        if np.linalg.norm(R.T @ R - np.eye(3)) > _ORTHO_TOL:
            R = orthonormalize(R)
        object.__setattr__(self, "R", _frozen(R))
        object.__setattr__(self, "t", _frozen(np.asarray(self.t, dtype=float).reshape(3)))

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> Pose:
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def __matmul__(self, other: Pose) -> Pose:
        return compose(self, other)

    def inverse(self) -> Pose:
        return inverse(self)

    def __repr__(self) -> str:
        w = so3_log(self.R) if not _near_pi(self.R) else np.full(3, np.nan)
        return f"Pose(rotvec={np.round(w, 6).tolist()}, t={np.round(self.t, 6).tolist()})"


def _near_pi(R) -> bool:
    return (np.trace(R) - 1.0) / 2.0 < -1.0 + 1e-15


def translate(x: float, y: float, z: float) -> Pose:
    return Pose(np.eye(3), np.array([x, y, z], dtype=float))


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    """Rotation about the camera y axis. In a y-down frame a positive angle turns +z toward +x."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def compose(a: Pose, b: Pose) -> Pose:
    return Pose(a.R @ b.R, a.R @ b.t + a.t)


def inverse(p: Pose) -> Pose:
    Rt = p.R.T
    return Pose(Rt, -Rt @ p.t)


def relative(a_world: Pose, b_world: Pose) -> Pose:
    """Pose of frame b expressed in frame a: ``inverse(a) @ b``."""
    Rt = a_world.R.T
    return Pose(Rt @ b_world.R, Rt @ (b_world.t - a_world.t))


def transform_point(p: Pose, x) -> np.ndarray:
    return p.R @ np.asarray(x, dtype=float) + p.t


def transform_points(p: Pose, X) -> np.ndarray:
    """Apply ``p`` to an (N, 3) array of points."""
    return np.asarray(X, dtype=float) @ p.R.T + p.t


def _exp_coeffs(theta: float) -> tuple[float, float, float]:
    """sin(th)/th, (1-cos(th))/th^2, (th-sin(th))/th^3."""
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    s, c = math.sin(theta), math.cos(theta)
    return s / theta, (1.0 - c) / (theta * theta), (theta - s) / theta**3


def so3_exp(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    A, B, _ = _exp_coeffs(theta)
    W = hat(w)
    return np.eye(3) + A * W + B * (W @ W)


def so3_log(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    cos = (np.trace(R) - 1.0) / 2.0
    s = 0.5 * vee(R - R.T)  # sin(theta) * axis
    sin = float(np.linalg.norm(s))
    theta = math.atan2(sin, cos)
    if theta < SMALL_ANGLE:
        return s * (1.0 + theta * theta / 6.0)
    if math.pi - theta < _CUT_LOCUS_TOL:
        raise DegenerateRotationError(f"rotation angle {theta!r} is at the cut locus")
    if theta > 2.5:
        # sin(theta) is small here; read the axis off the symmetric part instead.
        B = 0.5 * (R + R.T) - cos * np.eye(3)
        i = int(np.argmax(np.diag(B)))
        axis = B[:, i] / np.linalg.norm(B[:, i])
        if axis @ s < 0:
            axis = -axis
        return theta * axis
    return s * (theta / sin)


def so3_left_jacobian(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    _, B, C = _exp_coeffs(float(np.linalg.norm(w)))
    W = hat(w)
    return np.eye(3) + B * W + C * (W @ W)


def _inv_jac_coeff(theta: float) -> float:
    if theta < _JAC_SMALL_ANGLE:
        return 1.0 / 12.0 + theta * theta / 720.0
    return (1.0 - theta * math.sin(theta) / (2.0 * (1.0 - math.cos(theta)))) / (theta * theta)


def so3_left_jacobian_inv(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    W = hat(w)
    D = _inv_jac_coeff(float(np.linalg.norm(w)))
    return np.eye(3) - 0.5 * W + D * (W @ W)


def exp(xi) -> Pose:
    xi = np.asarray(xi, dtype=float).reshape(6)
    w, v = xi[:3], xi[3:]
    theta = float(np.linalg.norm(w))
    A, B, C = _exp_coeffs(theta)
    W = hat(w)
    W2 = W @ W
    R = np.eye(3) + A * W + B * W2
    V = np.eye(3) + B * W + C * W2
    return Pose(R, V @ v)


def log(p: Pose) -> np.ndarray:
    w = so3_log(p.R)
    return np.concatenate([w, so3_left_jacobian_inv(w) @ p.t])


def adjoint(p: Pose) -> np.ndarray:
    """6x6 adjoint for rotation-first twists: ``p @ exp(xi) @ p^-1 == exp(adjoint(p) @ xi)``."""
    Ad = np.zeros((6, 6))
    Ad[:3, :3] = p.R
    Ad[3:, 3:] = p.R
    Ad[3:, :3] = hat(p.t) @ p.R
    return Ad


def _q_block(w: np.ndarray, v: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    W, P = hat(w), hat(v)
    if theta < _JAC_SMALL_ANGLE:
        t2 = theta * theta
        c2 = 1.0 / 6.0 - t2 / 120.0
        c3 = 1.0 / 24.0 - t2 / 720.0
        c4 = 1.0 / 120.0 - t2 / 2520.0
    else:
        s, c = math.sin(theta), math.cos(theta)
        c2 = (theta - s) / theta**3
        c3 = (theta * theta + 2.0 * c - 2.0) / (2.0 * theta**4)
        c4 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * theta**5)
    WP, PW = W @ P, P @ W
    WPW = WP @ W
    WW = W @ W
    return (
        0.5 * P
        + c2 * (WP + PW + WPW)
        + c3 * (WW @ P + PW @ W - 3.0 * WPW)
        + c4 * (WPW @ W + W @ WPW)
    )


def left_jacobian(xi) -> np.ndarray:
    """SE(3) left Jacobian: ``exp(xi + d) ~= exp(left_jacobian(xi) @ d) @ exp(xi)``."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    w, v = xi[:3], xi[3:]
    J = so3_left_jacobian(w)
    out = np.zeros((6, 6))
    out[:3, :3] = J
    out[3:, 3:] = J
    out[3:, :3] = _q_block(w, v)
    return out


def left_jacobian_inv(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float).reshape(6)
    w, v = xi[:3], xi[3:]
    Ji = so3_left_jacobian_inv(w)
    out = np.zeros((6, 6))
    out[:3, :3] = Ji
    out[3:, 3:] = Ji
    out[3:, :3] = -Ji @ _q_block(w, v) @ Ji
    return out


def right_jacobian_inv(xi) -> np.ndarray:
    """Inverse right Jacobian: ``log(exp(xi) @ exp(d)) ~= xi + right_jacobian_inv(xi) @ d``."""
    return left_jacobian_inv(-np.asarray(xi, dtype=float))


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, radians."""
    cos = (np.trace(R) - 1.0) / 2.0
    sin = float(np.linalg.norm(0.5 * vee(R - R.T)))
    return math.atan2(sin, cos)


def yaw_about(normal, forward) -> np.ndarray:
    """Rotation whose y axis points down along ``-normal`` and whose z axis is
    ``forward`` projected onto the plane orthogonal to ``normal``."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    f = np.asarray(forward, dtype=float)
    f = f - (f @ n) * n
    nf = np.linalg.norm(f)
    if nf < 1e-12:
        raise ValueError("forward direction is parallel to the plane normal")
    z = f / nf
    y = -n
    x = np.cross(y, z)
    return np.column_stack([x, y, z])
