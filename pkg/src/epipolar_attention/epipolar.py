"""Epipolar lines and their rasterization into latent-resolution masks.

A mask volume stores one bit per (query token, key token) pair. Tokens are
ordered frame-major, then row, then column (see ``attention.TokenIndex``), so
the dense view of a volume has shape ``(F, H, W, F, H, W)`` and flattens to
``(L, L)`` with ``L = F*H*W``. Bits are packed row-major, most significant bit
first (numpy's default ``packbits`` order).

Degenerate frame pairs (same frame, or zero baseline) get an all-true mask:
the constraint switches off instead of suppressing every key. A query whose
band misses the key frame entirely keeps the one key pixel nearest its line.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateMotion, DimensionMismatch, FormatError, LineUndefined
from .geometry import FundamentalMatrix, fundamental_matrix

DEFAULT_THRESHOLD = 1.0
# F is stored at unit Frobenius norm, so this is an absolute bound on |(a, b)|
LINE_EPS = 1e-12

MAGIC = b"EPMV1"
_HEADER = struct.Struct("<IIId")


def _as_array(F):
    if F is None:
        return None
    if isinstance(F, FundamentalMatrix):
        return F.f
    return FundamentalMatrix(F).f


def _raw_lines(f, u, v):
    # elementwise on purpose: batched and single-query calls round identically
    a = f[0, 0] * u + f[0, 1] * v + f[0, 2]
    b = f[1, 0] * u + f[1, 1] * v + f[1, 2]
    c = f[2, 0] * u + f[2, 1] * v + f[2, 2]
    return a, b, c


def _normalize(a, b, c):
    a, b, c = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (a, b, c)))
    n = np.hypot(a, b)
    valid = n > LINE_EPS
    safe = np.where(valid, n, 1.0)
    a, b, c = a / safe, b / safe, c / safe
    # canonical sign: c > 0, else a > 0, else b > 0
    flip = (c < 0) | ((c == 0) & ((a < 0) | ((a == 0) & (b < 0))))
    s = np.where(flip, -1.0, 1.0)
    return a * s, b * s, c * s, valid


@dataclass(frozen=True)
class EpipolarLine:
    """Line ``a*u + b*v + c = 0`` with ``a**2 + b**2 == 1``."""
    a: float
    b: float
    c: float

    @classmethod
    def from_coefficients(cls, a, b, c):
        na, nb, nc, valid = _normalize(a, b, c)
        if not bool(valid):
            raise LineUndefined(f"line ({a}, {b}, {c}) has no finite part")
        return cls(float(na), float(nb), float(nc))

    def as_array(self):
        return np.array([self.a, self.b, self.c])


def epipolar_line(F, p) -> EpipolarLine:
    """Line in frame j on which every correspondence of pixel ``p`` in frame i lies."""
    f = _as_array(F)
    u, v = float(p[0]), float(p[1])
    a, b, c = _raw_lines(f, u, v)
    na, nb, nc, valid = _normalize(a, b, c)
    if not bool(valid):
        raise LineUndefined(f"query {tuple(p)} maps to no finite epipolar line")
    return EpipolarLine(float(na), float(nb), float(nc))


def point_line_distance(line: EpipolarLine, q) -> float:
    return abs(line.a * q[0] + line.b * q[1] + line.c)


def _pixel_grid(H, W):
    v, u = np.mgrid[0:H, 0:W]
    return u.astype(np.float64), v.astype(np.float64)


def _band(a, b, c, H, W, threshold):
    """Rasterize normalized lines (shape (N,)) into (N, H, W) boolean bands.

    A line whose band misses the grid keeps its single nearest pixel, so no
    mask is ever empty.
    """
    U, V = _pixel_grid(H, W)
    d = np.abs(a[:, None, None] * U + b[:, None, None] * V + c[:, None, None])
    band = d <= threshold
    empty = ~band.reshape(len(a), -1).any(axis=1)
    if empty.any():
        flat = band.reshape(len(a), -1)
        nearest = d.reshape(len(a), -1)[empty].argmin(axis=1)
        flat[np.flatnonzero(empty), nearest] = True
    return band


@dataclass(frozen=True)
class EpipolarMask:
    grid: np.ndarray
    query: tuple
    key_frame: int | None = None

    @property
    def popcount(self) -> int:
        return int(self.grid.sum())


def epipolar_mask(F, query, dims, threshold=DEFAULT_THRESHOLD, *, frames=None) -> EpipolarMask:
    """Boolean (H, W) grid of key pixels within ``threshold`` of the query's line.

    ``F=None`` marks a degenerate pair and yields an all-true grid.
    ``frames=(i, j)`` only annotates the result.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    H, W = dims
    i, j = frames if frames is not None else (None, None)
    if F is None:
        grid = np.ones((H, W), dtype=bool)
    else:
        f = _as_array(F)
        a, b, c = _raw_lines(f, np.float64(query[0]), np.float64(query[1]))
        a, b, c, valid = _normalize(np.atleast_1d(a), np.atleast_1d(b), np.atleast_1d(c))
        if not valid[0]:
            raise LineUndefined(f"query {tuple(query)} maps to no finite epipolar line")
        grid = _band(a, b, c, H, W, threshold)[0]
    return EpipolarMask(grid, (i, query[0], query[1]), j)


def pair_fundamental(pose_i, pose_j, same_frame=False):
    """F for a frame pair, or None when the pair is degenerate."""
    if same_frame:
        return None
    try:
        return fundamental_matrix(pose_i, pose_j)
    except DegenerateMotion:
        return None


def pair_matrices(trajectory):
    """Table of fundamental matrices (or None) for every ordered frame pair."""
    n = len(trajectory)
    return [[pair_fundamental(trajectory[i], trajectory[j], same_frame=(i == j))
             for j in range(n)] for i in range(n)]


def iter_frame_blocks(trajectory, dims, threshold=DEFAULT_THRESHOLD, fmats=None):
    """Yield ``(i, block)`` with block of shape (H*W, F*H*W): all query rows of frame i.

    Query pixels whose line is undefined (they sit on the epipole) fall back
    to all-true rows for that key frame.
    """
    H, W = dims
    n = len(trajectory)
    hw = H * W
    if fmats is None:
        fmats = pair_matrices(trajectory)
    U, V = _pixel_grid(H, W)
    qu, qv = U.ravel(), V.ravel()
    for i in range(n):
        block = np.ones((hw, n * hw), dtype=bool)
        for j in range(n):
            F = fmats[i][j]
            if F is None:
                continue
            a, b, c, valid = _normalize(*_raw_lines(F.f, qu, qv))
            band = _band(a, b, c, H, W, threshold).reshape(hw, hw)
            band[~valid] = True
            block[:, j * hw:(j + 1) * hw] = band
        yield i, block


class EpipolarMaskVolume:
    """Bit-packed boolean volume over (query token, key token)."""

    def __init__(self, packed, dims, threshold):
        F, H, W = (int(x) for x in dims)
        L = F * H * W
        packed = np.ascontiguousarray(packed, dtype=np.uint8).ravel()
        if packed.size != math.ceil(L * L / 8):
            raise DimensionMismatch(
                f"payload of {packed.size} bytes does not match dims {(F, H, W)}")
        packed.setflags(write=False)
        self.packed = packed
        self.dims = (F, H, W)
        self.threshold = float(threshold)

    @property
    def num_tokens(self):
        F, H, W = self.dims
        return F * H * W

    @property
    def nbytes(self):
        return self.packed.nbytes

    def __eq__(self, other):
        if not isinstance(other, EpipolarMaskVolume):
            return NotImplemented
        return (self.dims == other.dims and self.threshold == other.threshold
                and np.array_equal(self.packed, other.packed))

    def rows(self, start, stop):
        """Dense boolean rows ``[start, stop)`` of the (L, L) view."""
        L = self.num_tokens
        lo, hi = start * L, stop * L
        byte_lo, byte_hi = lo // 8, math.ceil(hi / 8)
        bits = np.unpackbits(self.packed[byte_lo:byte_hi])
        off = lo - 8 * byte_lo
        return bits[off:off + (hi - lo)].astype(bool).reshape(stop - start, L)

    def row(self, token):
        return self.rows(token, token + 1)[0]

    def dense(self):
        L = self.num_tokens
        return np.unpackbits(self.packed, count=L * L).astype(bool).reshape(L, L)

    def slice(self, i, u, v, j):
        """(H, W) key mask in frame j for query pixel (u, v) of frame i."""
        F, H, W = self.dims
        if not (0 <= i < F and 0 <= j < F and 0 <= u < W and 0 <= v < H):
            raise IndexError(f"query {(i, u, v)} / key frame {j} outside dims {self.dims}")
        r = self.row(i * H * W + v * W + u)
        return r[j * H * W:(j + 1) * H * W].reshape(H, W)

    def pair_popcount_fraction(self):
        """(F, F) array: mean fraction of key pixels kept, per frame pair."""
        F, H, W = self.dims
        hw = H * W
        out = np.zeros((F, F))
        for i in range(F):
            block = self.rows(i * hw, (i + 1) * hw)
            counts = block.reshape(hw, F, hw).sum(axis=(0, 2))
            out[i] = counts / (hw * hw)
        return out

    def to_bytes(self) -> bytes:
        F, H, W = self.dims
        return MAGIC + _HEADER.pack(F, H, W, self.threshold) + self.packed.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes):
        if data[:len(MAGIC)] != MAGIC:
            raise FormatError("not an EPMV1 mask volume")
        off = len(MAGIC)
        if len(data) < off + _HEADER.size:
            raise FormatError("truncated EPMV1 header")
        F, H, W, threshold = _HEADER.unpack_from(data, off)
        payload = np.frombuffer(data, dtype=np.uint8, offset=off + _HEADER.size)
        L = F * H * W
        if payload.size != math.ceil(L * L / 8):
            raise FormatError(f"EPMV1 payload has {payload.size} bytes, expected {math.ceil(L * L / 8)}")
        return cls(payload.copy(), (F, H, W), threshold)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


def pack_blocks(blocks, num_tokens):
    """Pack an iterable of boolean row blocks (each (n, L)) into one byte array."""
    L = num_tokens
    chunks = []
    carry = np.zeros((0, L), dtype=bool)
    for block in blocks:
        rows = np.concatenate([carry, block]) if carry.size else block
        # a multiple of 8 rows always ends on a byte boundary
        keep = (rows.shape[0] // 8) * 8
        if keep:
            chunks.append(np.packbits(rows[:keep]))
        carry = rows[keep:]
    if carry.shape[0]:
        chunks.append(np.packbits(carry))
    if not chunks:
        return np.zeros(0, dtype=np.uint8)
    return np.concatenate(chunks)


def mask_volume(trajectory, dims, threshold=DEFAULT_THRESHOLD) -> EpipolarMaskVolume:
    """Epipolar masks for every ordered frame pair of a trajectory.

    ``dims`` is (H, W) at latent resolution; the frame count comes from the
    trajectory.
    """
    if len(trajectory) < 2:
        raise ValueError("a mask volume needs at least two frames")
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    H, W = dims
    F = len(trajectory)
    L = F * H * W
    blocks = (block for _, block in iter_frame_blocks(trajectory, (H, W), threshold))
    return EpipolarMaskVolume(pack_blocks(blocks, L), (F, H, W), threshold)


def degenerate_pairs(trajectory):
    """Ordered off-diagonal pairs (i, j) whose motion is degenerate."""
    fm = pair_matrices(trajectory)
    n = len(trajectory)
    return [(i, j) for i in range(n) for j in range(n) if i != j and fm[i][j] is None]
