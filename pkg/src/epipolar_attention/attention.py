"""Single-head 3D full attention over flattened video latents.

Token order is frame-major, then row (v), then column (u)::

    token = f*H*W + v*W + u

which is also the row-major order of an ``(F, H, W)`` array.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EmptyRow, FormatError, NonFiniteInput

DEFAULT_PERCENTILE = 30.0

MAGIC = b"ATTN1"
_HEADER = struct.Struct("<II")


@dataclass(frozen=True)
class TokenIndex:
    """Bijection between flat token indices and (f, u, v) latent positions."""
    F: int
    H: int
    W: int

    @property
    def num_tokens(self):
        return self.F * self.H * self.W

    def token(self, f, u, v):
        if not (0 <= f < self.F and 0 <= u < self.W and 0 <= v < self.H):
            raise IndexError(f"position {(f, u, v)} outside {(self.F, self.H, self.W)}")
        return (f * self.H + v) * self.W + u

    def position(self, token):
        """Inverse of ``token``: returns (f, u, v)."""
        if not 0 <= token < self.num_tokens:
            raise IndexError(token)
        f, rem = divmod(int(token), self.H * self.W)
        v, u = divmod(rem, self.W)
        return f, u, v

    def frame_of(self, tokens):
        return np.asarray(tokens) // (self.H * self.W)

    def table(self):
        """(L, 3) integer array of (f, u, v) per token."""
        f, v, u = np.unravel_index(np.arange(self.num_tokens), (self.F, self.H, self.W))
        return np.stack([f, u, v], axis=1)


@dataclass(frozen=True)
class VideoLatent:
    data: np.ndarray  # (B, F, C, H, W)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 5 or min(d.shape) < 1:
            raise DimensionMismatch(f"latent must be (B, F, C, H, W), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise NonFiniteInput("latent contains NaN or Inf")
        object.__setattr__(self, "data", d)

    @property
    def dims(self):
        B, F, C, H, W = self.data.shape
        return F, H, W


def flatten_latent(h: VideoLatent):
    """Reshape (B, F, C, H, W) into tokens (B, L, C) plus the token index map."""
    B, F, C, H, W = h.data.shape
    tokens = h.data.transpose(0, 1, 3, 4, 2).reshape(B, F * H * W, C)
    return tokens, TokenIndex(F, H, W)


def unflatten_latent(tokens, index: TokenIndex) -> VideoLatent:
    tokens = np.asarray(tokens)
    B, L, C = tokens.shape
    if L != index.num_tokens:
        raise DimensionMismatch(f"{L} tokens do not match index of {index.num_tokens}")
    data = tokens.reshape(B, index.F, index.H, index.W, C).transpose(0, 1, 4, 2, 3)
    return VideoLatent(data)


@dataclass(frozen=True)
class ProjectionWeights:
    wq: np.ndarray
    wk: np.ndarray

    def __post_init__(self):
        wq = np.asarray(self.wq, dtype=np.float64)
        wk = np.asarray(self.wk, dtype=np.float64)
        if wq.ndim != 2 or wq.shape[0] != wq.shape[1] or wq.shape != wk.shape:
            raise DimensionMismatch("projections must be equal square matrices")
        if not (np.all(np.isfinite(wq)) and np.all(np.isfinite(wk))):
            raise NonFiniteInput("projection weights must be finite")
        object.__setattr__(self, "wq", wq)
        object.__setattr__(self, "wk", wk)

    @classmethod
    def random(cls, channels, rng, scale=None):
        scale = 1.0 / math.sqrt(channels) if scale is None else scale
        return cls(rng.normal(0.0, scale, (channels, channels)),
                   rng.normal(0.0, scale, (channels, channels)))


@dataclass(frozen=True)
class AttentionMap:
    """Row-stochastic (B, L, L) attention weights; read-only."""
    a: np.ndarray
    dims: tuple

    def __post_init__(self):
        a = np.array(self.a, dtype=np.float64)
        if a.ndim == 2:
            a = a[None]
        F, H, W = self.dims
        if a.ndim != 3 or a.shape[1] != a.shape[2] or a.shape[1] != F * H * W:
            raise DimensionMismatch(f"attention of shape {a.shape} does not match dims {self.dims}")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "dims", tuple(int(x) for x in self.dims))

    @property
    def num_tokens(self):
        return self.a.shape[1]


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFiniteInput("logits contain NaN or Inf")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def attention_logits(tokens, proj: ProjectionWeights, d=None):
    """Scaled scores ``Q K^T / sqrt(d)`` with Q = x wq^T, K = x wk^T."""
    x = np.asarray(tokens, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("tokens contain NaN or Inf")
    if x.ndim == 2:
        x = x[None]
    d = x.shape[-1] if d is None else d
    if not d > 0:
        raise ValueError("d must be positive")
    q = x @ proj.wq.T
    k = x @ proj.wk.T
    return q @ k.transpose(0, 2, 1) / math.sqrt(d)


def attention_map(tokens, proj: ProjectionWeights, d=None, dims=None) -> AttentionMap:
    """Softmax over the key axis of the scaled query/key scores.

    ``dims`` defaults to a single frame of shape (1, L) when not given.
    """
    z = attention_logits(tokens, proj, d)
    L = z.shape[-1]
    return AttentionMap(softmax(z), dims if dims is not None else (1, 1, L))


def _rank(p, n):
    if not 0 < p < 100:
        raise ValueError(f"percentile must lie in (0, 100), got {p}")
    # exact rational arithmetic so 30% of 10 is 3, not 3.0000000000000004
    return max(math.ceil(Fraction(p) * n / 100), 1)


def percentile_threshold(row, p=DEFAULT_PERCENTILE) -> float:
    """Nearest-rank percentile: ``sorted(row)[ceil(p/100 * n) - 1]``."""
    row = np.asarray(row, dtype=np.float64).ravel()
    if row.size == 0:
        raise EmptyRow("cannot take a percentile of an empty row")
    k = _rank(p, row.size) - 1
    return float(np.partition(row, k)[k])


def row_thresholds(a, p=DEFAULT_PERCENTILE, dims=None, mode="row"):
    """Per-query thresholds for an attention tensor of shape (..., L, L).

    ``mode="row"`` takes the percentile over all L keys of each row and returns
    shape (..., L, 1). ``mode="block"`` takes it separately over each key
    frame's H*W entries and returns shape (..., L, L) broadcast per block, so
    either result compares directly against ``a``.
    """
    a = np.asarray(a, dtype=np.float64)
    L = a.shape[-1]
    if L == 0:
        raise EmptyRow("attention rows are empty")
    if mode == "row":
        k = _rank(p, L) - 1
        return np.partition(a, k, axis=-1)[..., k:k + 1]
    if mode == "block":
        if dims is None:
            raise ValueError("block mode needs dims")
        F, H, W = dims
        hw = H * W
        blocks = a.reshape(*a.shape[:-1], F, hw)
        k = _rank(p, hw) - 1
        d = np.partition(blocks, k, axis=-1)[..., k:k + 1]
        return np.broadcast_to(d, blocks.shape).reshape(a.shape)
    raise ValueError(f"unknown threshold mode {mode!r}")


def background_token_set(human_mask, dims, spatial_factor=8, temporal_factor=4):
    """Sorted token indices of latent pixels that are mostly background.

    ``human_mask`` is a boolean (N, H_img, W_img) sequence. It is either already
    at latent frame rate (N == F) or at source rate, in which case frame
    ``temporal_factor * f`` stands for latent frame f. A latent pixel is
    background when fewer than half of its ``spatial_factor**2`` image pixels
    are human.
    """
    m = np.asarray(human_mask, dtype=bool)
    F, H, W = dims
    s = spatial_factor
    if m.ndim != 3:
        raise DimensionMismatch(f"human mask must be (N, H, W), got {m.shape}")
    if m.shape[1:] != (H * s, W * s):
        raise DimensionMismatch(f"mask frames {m.shape[1:]} != latent {(H, W)} x {s}")
    if m.shape[0] != F:
        picked = m[::temporal_factor]
        if picked.shape[0] != F:
            raise DimensionMismatch(f"{m.shape[0]} mask frames do not map onto {F} latent frames")
        m = picked
    counts = m.reshape(F, H, s, W, s).sum(axis=(2, 4))
    background = 2 * counts < s * s
    return np.flatnonzero(background.ravel())


def save_attention(a, path=None):
    """Serialize a (B, L, L) float64 tensor as ATTN1; returns the bytes."""
    a = np.asarray(a.a if isinstance(a, AttentionMap) else a, dtype="<f8")
    if a.ndim == 2:
        a = a[None]
    B, L, L2 = a.shape
    if L != L2:
        raise DimensionMismatch("attention must be square per batch element")
    data = MAGIC + _HEADER.pack(B, L) + np.ascontiguousarray(a).tobytes()
    if path is not None:
        Path(path).write_bytes(data)
    return data


def load_attention(source):
    """Read ATTN1 from a path or bytes; returns a (B, L, L) float64 array."""
    data = source if isinstance(source, (bytes, bytearray)) else Path(source).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise FormatError("not an ATTN1 attention file")
    off = len(MAGIC)
    if len(data) < off + _HEADER.size:
        raise FormatError("truncated ATTN1 header")
    B, L = _HEADER.unpack_from(data, off)
    payload = np.frombuffer(data, dtype="<f8", offset=off + _HEADER.size)
    if payload.size != B * L * L:
        raise FormatError(f"ATTN1 payload has {payload.size} values, expected {B * L * L}")
    return payload.reshape(B, L, L).astype(np.float64)
