"""Synthetic camera rigs for tests, demos and the command line."""
from __future__ import annotations

import numpy as np

from .geometry import (CameraExtrinsics, CameraIntrinsics, CameraPose,
                       rotation_from_axis_angle)
from .trajectory_io import Trajectory


def default_intrinsics(H, W, focal=None):
    """Pinhole intrinsics centred on an H x W latent grid."""
    focal = float(max(H, W)) if focal is None else focal
    return CameraIntrinsics(focal, focal, (W - 1) / 2.0, (H - 1) / 2.0)


def translating_rig(num_frames, dims, step=(0.25, 0.05, 0.1), yaw=0.04):
    """Camera sliding sideways while turning slightly; all pairs non-degenerate."""
    H, W = dims
    K = default_intrinsics(H, W)
    poses = []
    for f in range(num_frames):
        R = rotation_from_axis_angle([0.0, 1.0, 0.0], yaw * f)
        centre = np.asarray(step, dtype=np.float64) * f
        poses.append(CameraPose(K, CameraExtrinsics(R, -R @ centre), f))
    return poses


def static_rig(num_frames, dims):
    H, W = dims
    K = default_intrinsics(H, W)
    return [CameraPose(K, CameraExtrinsics.identity(), f) for f in range(num_frames)]


def random_rig(rng, dims=(32, 32), num_frames=2, baseline=(0.2, 1.0), max_angle=0.3):
    """Random non-degenerate rig; intrinsics vary per frame."""
    H, W = dims
    poses = []
    for f in range(num_frames):
        focal = rng.uniform(0.8, 1.5) * max(H, W)
        K = CameraIntrinsics(focal * rng.uniform(0.9, 1.1), focal,
                             (W - 1) / 2 + rng.uniform(-2, 2), (H - 1) / 2 + rng.uniform(-2, 2))
        if f == 0:
            R, centre = np.eye(3), np.zeros(3)
        else:
            R = rotation_from_axis_angle(rng.normal(size=3), rng.uniform(0.0, max_angle))
            d = rng.normal(size=3)
            centre = d / np.linalg.norm(d) * rng.uniform(*baseline)
        poses.append(CameraPose(K, CameraExtrinsics(R, -R @ centre), f))
    return poses


def shared_points(rng, poses, n, depth=(3.0, 8.0), spread=1.5):
    """Random world points in front of every camera of ``poses``."""
    out = []
    while sum(len(x) for x in out) < n:
        X = np.column_stack([rng.uniform(-spread, spread, 2 * n),
                             rng.uniform(-spread, spread, 2 * n),
                             rng.uniform(*depth, 2 * n)])
        ok = np.ones(len(X), dtype=bool)
        for p in poses:
            ok &= p.extrinsics.transform(X)[:, 2] > 0.5
        out.append(X[ok])
    return np.concatenate(out)[:n]


def desk_scene(dims=(4, 12, 9)):
    """The fixed latent-resolution scene used by the training demo."""
    F, H, W = dims
    return Trajectory(tuple(translating_rig(F, (H, W))), W, H)
