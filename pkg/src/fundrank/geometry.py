"""Camera parameterization and exact pairwise epipolar quantities.

Conventions: a camera has orientation R (columns are the camera axes in
world coordinates), center t, and upper-triangular calibration K. A world
point P projects to homogeneous image coordinates K @ R.T @ (P - t),
normalized by its third (depth) coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CameraPose",
    "RelativePose",
    "ZeroDepth",
    "skew",
    "relative_pose",
    "essential_global",
    "fundamental_global",
    "project",
    "depth",
]

_ORTHO_TOL = 1e-9
_DEPTH_EPS = 1e-12


class ZeroDepth(ValueError):
    """Point lies on the camera's principal plane (|depth| < 1e-12)."""


def _as_array(x, shape, name):
    arr = np.asarray(x, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    return arr


def skew(v) -> np.ndarray:
    """Cross-product matrix: skew(v) @ w == np.cross(v, w)."""
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


@dataclass(frozen=True)
class CameraPose:
    """Camera orientation R, center t, and calibration K.

    Near-orthonormal R (within 1e-9 of the orthogonal group) is snapped to
    the closest rotation by polar projection; anything farther, or any
    reflection, is rejected. K defaults to the identity (calibrated camera)
    and must be upper-triangular with positive diagonal and K[2,2] = 1.
    Arrays are copied and frozen: poses are safe to share across workers.
    """

    R: np.ndarray
    t: np.ndarray
    K: np.ndarray | None = None

    def __post_init__(self):
        R = _as_array(self.R, (3, 3), "R")
        drift = np.linalg.norm(R.T @ R - np.eye(3))
        if drift > _ORTHO_TOL:
            raise ValueError("R is not orthonormal within 1e-9")
        if drift > 1e-12:
            # polar projection onto the orthogonal group; skipped when the
            # invariant already holds so construction is idempotent
            U, _, Vt = np.linalg.svd(R)
            R = U @ Vt
        if np.linalg.det(R) < 0:
            raise ValueError("R must be a rotation (det +1), not a reflection")
        t = _as_array(self.t, (3,), "t")
        if self.K is None:
            K = np.eye(3)
        else:
            K = _as_array(self.K, (3, 3), "K")
            if np.any(K[np.tril_indices(3, -1)] != 0.0):
                raise ValueError("K must have exact zeros below the diagonal")
            if np.any(np.diag(K) <= 0.0):
                raise ValueError("K must have a positive diagonal")
            if abs(K[2, 2] - 1.0) > 1e-12:
                raise ValueError("K[2,2] must equal 1")
        for name, arr in (("R", R), ("t", t), ("K", K)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class RelativePose:
    """Rotation and translation taking camera b's frame into camera a's."""

    R_rel: np.ndarray
    t_rel: np.ndarray

    def inverse(self) -> "RelativePose":
        return RelativePose(self.R_rel.T, -self.R_rel.T @ self.t_rel)


def relative_pose(a: CameraPose, b: CameraPose) -> RelativePose:
    """Relative pose of the pair: R_rel = Ra.T @ Rb, t_rel = Ra.T @ (ta - tb)."""
    return RelativePose(a.R.T @ b.R, a.R.T @ (a.t - b.t))


def essential_global(a: CameraPose, b: CameraPose) -> np.ndarray:
    """Essential matrix of the pair from global-frame poses.

    Ra.T @ ([ta]x - [tb]x) @ Rb, which equals [t_rel]x @ R_rel of the
    relative pose.
    """
    return a.R.T @ (skew(a.t) - skew(b.t)) @ b.R


def fundamental_global(a: CameraPose, b: CameraPose) -> np.ndarray:
    """Fundamental matrix Ka^-T @ E @ Kb^-1 from global-frame poses; rank <= 2."""
    E = essential_global(a, b)
    return np.linalg.inv(a.K).T @ E @ np.linalg.inv(b.K)


def depth(pose: CameraPose, P) -> float:
    """Signed depth of world point P in the camera (third camera-frame coord)."""
    P = np.asarray(P, dtype=float).reshape(3)
    return float((pose.R.T @ (P - pose.t))[2])


def project(pose: CameraPose, P) -> np.ndarray:
    """Homogeneous image coordinates of world point P; third coordinate is 1."""
    P = np.asarray(P, dtype=float).reshape(3)
    Pc = pose.K @ (pose.R.T @ (P - pose.t))
    if abs(Pc[2]) < _DEPTH_EPS:
        raise ZeroDepth(f"depth {Pc[2]:.3e} is below 1e-12")
    return Pc / Pc[2]
