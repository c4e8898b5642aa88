"""Deformable keypoint shape prior and its pose/shape fitting.

A vehicle instance is ``X_i = R (Xbar_i + (V @ lam)_i) + tr`` for each of the
k keypoints, observed through a pinhole camera. Fitting alternates a pose
block (right-multiplicative SE(3) updates) with a ridge-regularized shape
block, both solved by damped Gauss-Newton.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import se3
from .errors import BehindCameraError, InsufficientKeypointsError
from .ground import CameraIntrinsics
from .se3 import Pose

MIN_DEPTH = 1e-9
MIN_VISIBLE = 6
DEFAULT_SHAPE_WEIGHT = 10.0  # px^2 per unit coefficient^2


@dataclass(frozen=True, eq=False)
class ShapeBasis:
    """Mean wireframe (k, 3), deformation basis (3k, B) and wheel-centre indices.

    Basis columns are normalized to unit length on construction. Rows of the
    basis follow the stacked layout ``(x1, y1, z1, x2, ...)``.
    """

    mean_shape: np.ndarray
    basis: np.ndarray
    wheel_indices: tuple[int, ...]

    def __post_init__(self):
        mean = np.array(self.mean_shape, dtype=float).reshape(-1, 3)
        k = len(mean)
        V = np.array(self.basis, dtype=float).reshape(3 * k, -1)
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(V))):
            raise ValueError("shape basis contains non-finite values")
        norms = np.linalg.norm(V, axis=0)
        if np.any(norms == 0):
            raise ValueError("shape basis has a zero column")
        V = V / norms
        wheels = tuple(int(i) for i in self.wheel_indices)
        if not wheels or not all(0 <= i < k for i in wheels):
            raise ValueError(f"wheel indices {wheels} invalid for {k} keypoints")
        for name, value in (("mean_shape", mean), ("basis", V)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "wheel_indices", wheels)

    @property
    def k(self) -> int:
        return len(self.mean_shape)

    @property
    def B(self) -> int:
        return self.basis.shape[1]

    def deformed(self, coeffs) -> np.ndarray:
        """Body-frame keypoints ``Xbar + V lam`` as a (k, 3) array."""
        coeffs = np.asarray(coeffs, dtype=float).reshape(self.B)
        return self.mean_shape + (self.basis @ coeffs).reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class KeypointObservation:
    pixels: np.ndarray
    confidences: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=float).reshape(-1, 2)
        conf = np.array(self.confidences, dtype=float).reshape(-1)
        if len(conf) != len(px):
            raise ValueError("pixels and confidences differ in length")
        if np.any((conf < 0) | (conf > 1)):
            raise ValueError("confidences must lie in [0, 1]")
        px.setflags(write=False)
        conf.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "confidences", conf)

    @property
    def visible(self) -> np.ndarray:
        return self.confidences > 0


@dataclass(frozen=True, eq=False)
class ShapeFit:
    rotation: np.ndarray
    translation: np.ndarray
    coefficients: np.ndarray
    loss: float = float("nan")  # objective: weighted reprojection + shape penalty, px^2
    reprojection: float = float("nan")
    converged: bool = True
    rounds: int = 0
    history: tuple = field(default=())

    @property
    def pose(self) -> Pose:
        return Pose(self.rotation, self.translation)


def instantiate_shape(basis: ShapeBasis, coeffs, rot, trans) -> np.ndarray:
    """Camera-frame keypoints (k, 3) of a posed, deformed instance."""
    P = basis.deformed(coeffs)
    return P @ np.asarray(rot, dtype=float).T + np.asarray(trans, dtype=float)


def project(point, intrinsics: CameraIntrinsics) -> np.ndarray:
    X, Y, Z = np.asarray(point, dtype=float)
    if Z <= MIN_DEPTH:
        raise BehindCameraError(f"point {point} is not in front of the camera")
    return np.array([intrinsics.fx * X / Z + intrinsics.cx, intrinsics.fy * Y / Z + intrinsics.cy])


def project_points(points, intrinsics: CameraIntrinsics) -> np.ndarray:
    X = np.asarray(points, dtype=float).reshape(-1, 3)
    if np.any(X[:, 2] <= MIN_DEPTH):
        raise BehindCameraError("a point is not in front of the camera")
    return np.column_stack(
        [intrinsics.fx * X[:, 0] / X[:, 2] + intrinsics.cx, intrinsics.fy * X[:, 1] / X[:, 2] + intrinsics.cy]
    )


def reprojection_loss(basis, coeffs, rot, trans, obs: KeypointObservation, intrinsics) -> float:
    """Confidence-weighted sum of squared pixel errors over visible keypoints."""
    vis = obs.visible
    if not vis.any():
        return 0.0
    X = instantiate_shape(basis, coeffs, rot, trans)[vis]
    err = project_points(X, intrinsics) - obs.pixels[vis]
    return float(np.sum(obs.confidences[vis] * np.sum(err * err, axis=1)))


def residuals_and_jacobians(basis, coeffs, pose: Pose, obs: KeypointObservation, intrinsics):
    """Whitened residuals over visible keypoints and their Jacobians.

    Returns ``(r, J_pose, J_shape)`` with ``r`` of length 2m for m visible
    keypoints, ``J_pose`` (2m, 6) with respect to a right-multiplied tangent
    perturbation ``pose @ exp(d)``, and ``J_shape`` (2m, B).
    """
    vis = obs.visible
    idx = np.flatnonzero(vis)
    P = basis.deformed(coeffs)[idx]
    X = P @ pose.R.T + pose.t
    Z = X[:, 2]
    if np.any(Z <= MIN_DEPTH):
        raise BehindCameraError("a visible keypoint is not in front of the camera")
    fx, fy = intrinsics.fx, intrinsics.fy
    proj = np.column_stack([fx * X[:, 0] / Z + intrinsics.cx, fy * X[:, 1] / Z + intrinsics.cy])
    sw = np.sqrt(obs.confidences[idx])
    r = ((proj - obs.pixels[idx]) * sw[:, None]).reshape(-1)

    m = len(idx)
    dpi = np.zeros((m, 2, 3))
    dpi[:, 0, 0] = fx / Z
    dpi[:, 0, 2] = -fx * X[:, 0] / Z**2
    dpi[:, 1, 1] = fy / Z
    dpi[:, 1, 2] = -fy * X[:, 1] / Z**2
    dpi *= sw[:, None, None]

    # d(R (exp(d) P) + t) / d(w, v) = R [-hat(P), I]
    dX = np.zeros((m, 3, 6))
    hatP = np.zeros((m, 3, 3))
    hatP[:, 0, 1], hatP[:, 0, 2] = -P[:, 2], P[:, 1]
    hatP[:, 1, 0], hatP[:, 1, 2] = P[:, 2], -P[:, 0]
    hatP[:, 2, 0], hatP[:, 2, 1] = -P[:, 1], P[:, 0]
    dX[:, :, :3] = -np.einsum("ij,mjk->mik", pose.R, hatP)
    dX[:, :, 3:] = pose.R
    J_pose = np.einsum("mij,mjk->mik", dpi, dX).reshape(2 * m, 6)

    V = basis.basis.reshape(-1, 3, basis.B)[idx]
    dXs = np.einsum("ij,mjb->mib", pose.R, V)
    J_shape = np.einsum("mij,mjb->mib", dpi, dXs).reshape(2 * m, basis.B)
    return r, J_pose, J_shape


def _objective(basis, coeffs, pose, obs, intrinsics, shape_weight) -> float:
    try:
        rep = reprojection_loss(basis, coeffs, pose.R, pose.t, obs, intrinsics)
    except BehindCameraError:
        return float("inf")
    return rep + shape_weight * float(coeffs @ coeffs)


def _damped_block(cost_fn, lin_fn, update_fn, x0, cost0, max_iter=50):
    """Levenberg-Marquardt on one parameter block.

    ``lin_fn(x) -> (g, H)`` gives the Gauss-Newton gradient and normal matrix,
    ``update_fn(x, delta)`` applies a step. Only cost decreases are accepted.
    """
    x, cost, mu = x0, cost0, 1e-4
    for _ in range(max_iter):
        g, H = lin_fn(x)
        if not np.all(np.isfinite(g)) or np.max(np.abs(g)) < 1e-14:
            break
        diag = np.diag(H).copy()
        diag[diag <= 0] = 1.0
        improved = False
        while mu <= 1e10:
            try:
                delta = np.linalg.solve(H + mu * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            x_new = update_fn(x, delta)
            c_new = cost_fn(x_new)
            if c_new < cost:
                improved = True
                break
            mu *= 10.0
        if not improved:
            break
        rel = (cost - c_new) / max(cost, 1e-300)
        x, cost = x_new, c_new
        mu = max(mu / 10.0, 1e-12)
        if rel < 1e-12:
            break
    return x, cost


def fit(
    basis: ShapeBasis,
    obs: KeypointObservation,
    intrinsics: CameraIntrinsics,
    init: ShapeFit,
    *,
    shape_weight: float = DEFAULT_SHAPE_WEIGHT,
    max_rounds: int = 10,
    tol: float = 1e-6,
) -> ShapeFit:
    """Fit pose and shape to 2D keypoints by alternating block minimization.

    Stops when a full pose+shape round lowers the objective by less than
    ``tol`` px^2, or after ``max_rounds`` rounds (``converged=False``).
    """
    n_vis = int(obs.visible.sum())
    if n_vis < MIN_VISIBLE:
        raise InsufficientKeypointsError(f"{n_vis} visible keypoints, need at least {MIN_VISIBLE}")
    if not init.translation[2] > 0:
        raise ValueError("initial translation must be in front of the camera")

    pose = init.pose
    lam = np.asarray(init.coefficients, dtype=float).reshape(basis.B).copy()
    cost = _objective(basis, lam, pose, obs, intrinsics, shape_weight)
    if not np.isfinite(cost):
        raise BehindCameraError("initial fit places visible keypoints behind the camera")
    history = [cost]

    def pose_lin(p):
        r, Jp, _ = residuals_and_jacobians(basis, lam, p, obs, intrinsics)
        return Jp.T @ r, Jp.T @ Jp

    def shape_lin(c):
        r, _, Js = residuals_and_jacobians(basis, c, pose, obs, intrinsics)
        g = Js.T @ r + shape_weight * c
        H = Js.T @ Js + shape_weight * np.eye(basis.B)
        return g, H

    converged = False
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        start = cost
        pose, cost = _damped_block(
            lambda p: _objective(basis, lam, p, obs, intrinsics, shape_weight),
            pose_lin,
            lambda p, d: p @ se3.exp(d),
            pose,
            cost,
        )
        lam, cost = _damped_block(
            lambda c: _objective(basis, c, pose, obs, intrinsics, shape_weight),
            shape_lin,
            lambda c, d: c + d,
            lam,
            cost,
        )
        history.append(cost)
        if start - cost < tol:
            converged = True
            break

    return ShapeFit(
        rotation=pose.R,
        translation=pose.t,
        coefficients=lam,
        loss=cost,
        reprojection=reprojection_loss(basis, lam, pose.R, pose.t, obs, intrinsics),
        converged=converged,
        rounds=rounds,
        history=tuple(history),
    )


def vehicle_pose_from_fit(basis: ShapeBasis, fit_: ShapeFit) -> Pose:
    """Camera-frame vehicle pose: fitted rotation, translation at the mean wheel centre."""
    X = instantiate_shape(basis, fit_.coefficients, fit_.rotation, fit_.translation)
    return Pose(fit_.rotation, X[list(basis.wheel_indices)].mean(axis=0))


# Built-in 36-keypoint template. Body frame: x right, y down, z forward, origin
# at the mean of the four wheel centres.
WHEEL_RADIUS = 0.33


def _template_points() -> np.ndarray:
    r = WHEEL_RADIUS
    wheels = [(-0.8, 0.0, 1.3), (0.8, 0.0, 1.3), (-0.8, 0.0, -1.3), (0.8, 0.0, -1.3)]
    pts = list(wheels)
    pts += [(x, -r, z) for x, _, z in wheels]  # wheel tops
    pts += [(x, 0.0, z + r) for x, _, z in wheels]  # front rims
    pts += [(x, y, z) for z in (2.0, -2.0) for y in (0.13, -0.42) for x in (-0.85, 0.85)]
    pts += [(x, -1.17, z) for z in (0.5, -0.9) for x in (-0.7, 0.7)]  # roof
    pts += [(x, -0.47, z) for z in (1.05, -1.55) for x in (-0.78, 0.78)]  # window bases
    pts += [(-0.62, -0.22, 2.02), (0.62, -0.22, 2.02), (-0.65, -0.3, -2.02), (0.65, -0.3, -2.02)]
    pts += [(-0.98, -0.6, 0.85), (0.98, -0.6, 0.85)]  # mirrors
    pts += [(0.0, -0.05, 2.03), (0.0, -0.12, -2.03)]  # plates
    return np.array(pts, dtype=float)


def template_basis() -> ShapeBasis:
    """Cuboid-with-wheels wireframe with five symmetric deformation modes.

    Modes: length, width, roof height, cabin fore-aft shift, hood length.
    None of them moves the wheel-centre mean or the wheel heights.
    """
    X = _template_points()
    k = len(X)
    modes = np.zeros((5, k, 3))
    modes[0, :, 2] = X[:, 2]
    modes[1, :, 0] = X[:, 0]
    roof = np.arange(20, 24)
    modes[2, roof, 1] = -1.0
    modes[2, 32:34, 1] = -0.3
    cabin = np.r_[20:28]
    modes[3, cabin, 2] = 1.0
    front = np.flatnonzero((X[:, 2] > 1.5) & (np.arange(k) >= 12))
    modes[4, front, 2] = 1.0
    V = modes.reshape(5, -1).T
    return ShapeBasis(X, V, (0, 1, 2, 3))
