"""Camera-trajectory text files and their mapping to latent resolution.

File layout (LF line endings, fields separated by spaces, ``#`` starts a
comment line)::

    convention=w2c width=1024 height=576 intrinsics=pixel
    0 fx fy cx cy r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2
    4 ...

The header is the first non-comment line. ``convention`` is ``w2c`` or
``c2w``; ``intrinsics`` is ``pixel`` (default) or ``normalized``, the latter
meaning fx, cx are fractions of the width and fy, cy fractions of the height.
Each pose line carries a frame index, four intrinsics and the 3x4 matrix
[R | T] in row-major order. Poses are always returned world-to-camera with
pixel intrinsics.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import NonRotation, ParseError
from .geometry import CameraExtrinsics, CameraIntrinsics, CameraPose, nearest_rotation

# rotations closer than this are kept verbatim; up to MAX_DRIFT they are
# projected back onto SO(3); beyond it the file is rejected
EXACT_DRIFT = 1e-9
MAX_DRIFT = 1e-4
VALUES_PER_LINE = 17


@dataclass(frozen=True)
class Trajectory:
    poses: tuple
    width: int
    height: int

    def __len__(self):
        return len(self.poses)


def _rotation_drift(R):
    return float(np.abs(R.T @ R - np.eye(3)).max())


def _clean_rotation(R, lineno):
    drift = _rotation_drift(R)
    det = np.linalg.det(R)
    if drift <= EXACT_DRIFT and abs(det - 1.0) <= EXACT_DRIFT:
        return R
    if drift > MAX_DRIFT or det < 0:
        raise NonRotation(f"line {lineno}: rotation drift {drift:.3g} exceeds {MAX_DRIFT}")
    return nearest_rotation(R)


def _parse_header(line, lineno):
    fields = {}
    for tok in line.split(" "):
        if not tok:
            continue
        key, sep, value = tok.partition("=")
        if not sep:
            raise ParseError(f"header field {tok!r} is not key=value", lineno)
        fields[key] = value
    missing = {"convention", "width", "height"} - fields.keys()
    if missing:
        raise ParseError(f"header lacks {', '.join(sorted(missing))}", lineno)
    if fields["convention"] not in ("w2c", "c2w"):
        raise ParseError(f"unknown convention {fields['convention']!r}", lineno)
    mode = fields.get("intrinsics", "pixel")
    if mode not in ("pixel", "normalized"):
        raise ParseError(f"unknown intrinsics mode {mode!r}", lineno)
    try:
        width, height = int(fields["width"]), int(fields["height"])
    except ValueError:
        raise ParseError("width and height must be integers", lineno) from None
    if width <= 0 or height <= 0:
        raise ParseError("image dims must be positive", lineno)
    return fields["convention"], width, height, mode


def load_trajectory(text: str) -> Trajectory:
    if "\r" in text:
        raise ParseError("trajectory files must use LF line endings")
    header = None
    poses = []
    last_index = -1
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if header is None:
            header = _parse_header(line, lineno)
            continue
        convention, width, height, mode = header
        parts = [p for p in line.split(" ") if p]
        if len(parts) != VALUES_PER_LINE:
            raise ParseError(f"expected {VALUES_PER_LINE} values, got {len(parts)}", lineno)
        try:
            index = int(parts[0])
            vals = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if not np.all(np.isfinite(vals)):
            raise ParseError("non-finite value", lineno)
        if index <= last_index:
            raise ParseError(f"frame index {index} does not increase", lineno)
        last_index = index
        fx, fy, cx, cy = vals[:4]
        if mode == "normalized":
            fx, cx, fy, cy = fx * width, cx * width, fy * height, cy * height
        try:
            intr = CameraIntrinsics(fx, fy, cx, cy)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        RT = np.array(vals[4:]).reshape(3, 4)
        R = _clean_rotation(RT[:, :3], lineno)
        T = RT[:, 3]
        if convention == "c2w":
            R, T = R.T, -R.T @ T
        poses.append(CameraPose(intr, CameraExtrinsics(R, T), index))
    if header is None:
        raise ParseError("missing header line")
    return Trajectory(tuple(poses), header[1], header[2])


def parse_trajectory(text: str) -> list:
    """Poses from trajectory text, converted to world-to-camera."""
    return list(load_trajectory(text).poses)


def read_trajectory(path) -> Trajectory:
    return load_trajectory(Path(path).read_text(encoding="utf-8"))


def serialize_trajectory(poses, width, height) -> str:
    """Canonical text form: w2c, pixel intrinsics, shortest round-trip floats."""
    lines = [f"convention=w2c width={int(width)} height={int(height)} intrinsics=pixel"]
    for p in poses:
        k = p.intrinsics
        RT = np.column_stack([p.extrinsics.R, p.extrinsics.T]).ravel()
        vals = [k.fx, k.fy, k.cx, k.cy, *RT]
        lines.append(" ".join([str(int(p.frame_index))] + [repr(float(x)) for x in vals]))
    return "\n".join(lines) + "\n"


def write_trajectory(path, trajectory: Trajectory):
    Path(path).write_text(serialize_trajectory(trajectory.poses, trajectory.width, trajectory.height),
                          encoding="utf-8", newline="\n")


def rescale_intrinsics(K: CameraIntrinsics, s) -> CameraIntrinsics:
    """Intrinsics for an image downsampled by ``s`` (e.g. 8 for the VAE latent grid)."""
    if s < 1:
        raise ValueError("spatial factor must be >= 1")
    return CameraIntrinsics(K.fx / s, K.fy / s, K.cx / s, K.cy / s)


def rescale_pose(pose: CameraPose, s) -> CameraPose:
    return replace(pose, intrinsics=rescale_intrinsics(pose.intrinsics, s))


def subsample_to_latent_frames(poses, factor=4) -> list:
    """Source frames 0, factor, 2*factor, ...: latent frame f <-> source frame factor*f."""
    if len(poses) == 0:
        raise ValueError("cannot subsample an empty trajectory")
    if factor < 1:
        raise ValueError("temporal factor must be >= 1")
    return list(poses[::factor])


def to_latent(trajectory: Trajectory, dims, spatial_factor=8, temporal_factor=4):
    """Latent-rate, latent-resolution poses matching ``dims = (F, H, W)``.

    A trajectory already at latent frame count is not subsampled; one whose
    image dims already equal (W, H) is not rescaled. Raises ValueError when
    neither reading fits.
    """
    F, H, W = dims
    poses = list(trajectory.poses)
    if len(poses) != F:
        poses = subsample_to_latent_frames(poses, temporal_factor)
        if len(poses) != F:
            raise ValueError(
                f"{len(trajectory)} poses map to {len(poses)} latent frames, expected {F}")
    if (trajectory.width, trajectory.height) == (W, H):
        return poses
    if (trajectory.width, trajectory.height) != (W * spatial_factor, H * spatial_factor):
        raise ValueError(f"image dims {trajectory.width}x{trajectory.height} do not map onto "
                         f"latent {W}x{H} at factor {spatial_factor}")
    return [rescale_pose(p, spatial_factor) for p in poses]
