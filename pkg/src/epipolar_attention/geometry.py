"""Pinhole camera poses, relative motion and fundamental matrices.

Extrinsics follow the world-to-camera convention throughout::

    x_cam = R @ x_world + T

Pixel coordinates are (u, v) = (column, row) at latent resolution, with pixel
centers on the integer lattice.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMotion

ROTATION_TOL = 1e-9
BASELINE_EPS = 1e-8


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    def inverse_matrix(self) -> np.ndarray:
        # closed form keeps K^-1 exact for the upper-triangular pinhole layout
        return np.array([[1.0 / self.fx, 0.0, -self.cx / self.fx],
                         [0.0, 1.0 / self.fy, -self.cy / self.fy],
                         [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraExtrinsics:
    R: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        R = _frozen(self.R)
        T = _frozen(self.T).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"R must be 3x3, got {R.shape}")
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(T)):
            raise ValueError("extrinsics must be finite")
        if np.abs(R.T @ R - np.eye(3)).max() > ROTATION_TOL:
            raise ValueError("R is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
            raise ValueError("R is not a proper rotation (det != 1)")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def transform(self, points_world):
        """Map (N, 3) world points into this camera's frame."""
        return np.asarray(points_world, dtype=np.float64) @ self.R.T + self.T


@dataclass(frozen=True)
class CameraPose:
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics
    frame_index: int = 0

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")

    def project(self, points_world):
        """Project (N, 3) world points to (N, 2) pixel coordinates and depths.

        Returns ``(uv, depth)``; callers filter on ``depth > 0``.
        """
        xc = self.extrinsics.transform(points_world)
        k = self.intrinsics
        z = xc[:, 2]
        u = k.fx * xc[:, 0] / z + k.cx
        v = k.fy * xc[:, 1] / z + k.cy
        return np.stack([u, v], axis=1), z


@dataclass(frozen=True)
class FundamentalMatrix:
    """3x3 rank-2 matrix with ``x_j^T f x_i = 0`` for corresponding pixels.

    Stored at unit Frobenius norm; the overall sign and scale carry no meaning.
    """
    f: np.ndarray = field(repr=False)

    def __post_init__(self):
        f = np.array(self.f, dtype=np.float64)
        if f.shape != (3, 3):
            raise ValueError(f"fundamental matrix must be 3x3, got {f.shape}")
        norm = np.linalg.norm(f)
        if not np.isfinite(norm) or norm == 0.0:
            raise DegenerateMotion("fundamental matrix is zero or non-finite")
        object.__setattr__(self, "f", _frozen(f / norm))

    def transpose(self) -> "FundamentalMatrix":
        """Fundamental matrix for the reversed frame pair (j -> i)."""
        return FundamentalMatrix(self.f.T)

    def residual(self, x_i, x_j):
        """Algebraic residuals x_j^T f x_i for (N, 2) pixel arrays."""
        xi = np.column_stack([np.asarray(x_i, float), np.ones(len(x_i))])
        xj = np.column_stack([np.asarray(x_j, float), np.ones(len(x_j))])
        return np.einsum("ni,ij,nj->n", xj, self.f, xi)


def relative_pose(pose_i: CameraPose, pose_j: CameraPose):
    """Rotation and translation taking camera-i coordinates to camera-j coordinates."""
    Ri, Ti = pose_i.extrinsics.R, pose_i.extrinsics.T
    Rj, Tj = pose_j.extrinsics.R, pose_j.extrinsics.T
    R_rel = Rj @ Ri.T
    T_rel = Tj - R_rel @ Ti
    return R_rel, T_rel


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ w == np.cross(v, w)``."""
    x, y, z = np.asarray(v, dtype=np.float64).reshape(3)
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def fundamental_matrix(pose_i: CameraPose, pose_j: CameraPose) -> FundamentalMatrix:
    """F_ij = K_j^-T [T_rel]x R_rel K_i^-1, normalized to unit Frobenius norm.

    Raises DegenerateMotion when the baseline is shorter than 1e-8 scene units.
    """
    R_rel, T_rel = relative_pose(pose_i, pose_j)
    if np.linalg.norm(T_rel) < BASELINE_EPS:
        raise DegenerateMotion(
            f"zero baseline between frames {pose_i.frame_index} and {pose_j.frame_index}")
    essential = skew(T_rel) @ R_rel
    f = pose_j.intrinsics.inverse_matrix().T @ essential @ pose_i.intrinsics.inverse_matrix()
    return FundamentalMatrix(f)


def rotation_from_axis_angle(axis, angle) -> np.ndarray:
    """Rodrigues' formula; handy for building synthetic rigs."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = skew(axis)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def nearest_rotation(M) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=np.float64))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def look_at(center, target, up=(0.0, -1.0, 0.0)) -> CameraExtrinsics:
    """World-to-camera extrinsics for a camera at ``center`` looking at ``target``.

    Camera axes: x right, y down, z forward.
    """
    center = np.asarray(center, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - center
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = nearest_rotation(np.stack([x, y, z]))
    return CameraExtrinsics(R, -R @ center)
