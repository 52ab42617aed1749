"""Low-rank background-motion adapter on a toy transformer block.

The adapter reads the same input as the block (denoising features plus pose
features) and its output is added to the block's output::

    h_out = block(h_in + h_pose) + (alpha / r) * up @ down @ (h_in + h_pose)

It is attached to the block's input projection ``w0``, so merging it yields a
block whose projection is ``w0 + (alpha / r) * up @ down``.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .attention import softmax
from .errors import DimensionMismatch, FormatError

MAGIC = b"LORA1"
_HEADER = struct.Struct("<IId")


def _readonly(x):
    x = np.array(x, dtype=np.float64)
    x.setflags(write=False)
    return x


@dataclass(frozen=True)
class LoraAdapter:
    down: np.ndarray  # (r, C)
    up: np.ndarray  # (C, r)
    alpha: float

    def __post_init__(self):
        down, up = _readonly(self.down), _readonly(self.up)
        if down.ndim != 2 or up.shape != down.shape[::-1]:
            raise DimensionMismatch(f"down {down.shape} and up {up.shape} are not (r, C) / (C, r)")
        r, C = down.shape
        if not 1 <= r < C:
            raise ValueError(f"rank must satisfy 1 <= r < C, got r={r}, C={C}")
        object.__setattr__(self, "down", down)
        object.__setattr__(self, "up", up)
        object.__setattr__(self, "alpha", float(self.alpha))

    @classmethod
    def init(cls, channels, rank, rng, alpha=None, init_scale=None):
        """Standard LoRA start: small uniform ``down``, zero ``up``."""
        bound = 1.0 / math.sqrt(channels) if init_scale is None else init_scale
        down = rng.uniform(-bound, bound, (rank, channels))
        return cls(down, np.zeros((channels, rank)), float(rank) if alpha is None else alpha)

    @property
    def rank(self):
        return self.down.shape[0]

    @property
    def channels(self):
        return self.down.shape[1]

    @property
    def scale(self):
        return self.alpha / self.rank

    def delta_weight(self):
        return self.scale * (self.up @ self.down)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.scale * ((x @ self.down.T) @ self.up.T)

    def to_bytes(self) -> bytes:
        return (MAGIC + _HEADER.pack(self.channels, self.rank, self.alpha)
                + self.down.astype("<f8").tobytes() + self.up.astype("<f8").tobytes())

    @classmethod
    def from_bytes(cls, data: bytes):
        if data[:len(MAGIC)] != MAGIC:
            raise FormatError("not a LORA1 adapter checkpoint")
        off = len(MAGIC)
        if len(data) < off + _HEADER.size:
            raise FormatError("truncated LORA1 header")
        C, r, alpha = _HEADER.unpack_from(data, off)
        payload = len(data) - off - _HEADER.size
        if payload != 16 * r * C:
            raise FormatError(f"LORA1 payload has {payload} bytes, expected {16 * r * C}")
        vals = np.frombuffer(data, dtype="<f8", offset=off + _HEADER.size)
        return cls(vals[:r * C].reshape(r, C), vals[r * C:].reshape(C, r), alpha)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class ToyDitBlock:
    """Toy-width block: linear input path plus attention and feed-forward branches.

    ``forward(x) = x w0^T + attn(x) + ffn(x)``. All parameters are read-only.
    """
    w0: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    w1: np.ndarray
    w2: np.ndarray

    def __post_init__(self):
        for name in ("w0", "wq", "wk", "wv", "w1", "w2"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        C = self.w0.shape[0]
        if any(w.shape != (C, C) for w in (self.w0, self.wq, self.wk, self.wv)):
            raise DimensionMismatch("projection weights must all be C x C")
        if self.w1.shape[1] != C or self.w2.shape != self.w1.shape[::-1]:
            raise DimensionMismatch("feed-forward weights must be (hidden, C) and (C, hidden)")

    @classmethod
    def random(cls, channels, rng, hidden=None):
        hidden = 2 * channels if hidden is None else hidden
        s = 1.0 / math.sqrt(channels)
        return cls(*(rng.normal(0.0, s, (channels, channels)) for _ in range(4)),
                   rng.normal(0.0, s, (hidden, channels)),
                   rng.normal(0.0, 1.0 / math.sqrt(hidden), (channels, hidden)))

    @property
    def channels(self):
        return self.w0.shape[0]

    def linear(self, x):
        return x @ self.w0.T

    def branches(self, x):
        C = self.channels
        scores = (x @ self.wq.T) @ (x @ self.wk.T).swapaxes(-1, -2) / math.sqrt(C)
        attn = softmax(scores) @ (x @ self.wv.T)
        ffn = np.tanh(x @ self.w1.T) @ self.w2.T
        return attn + ffn

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.channels:
            raise DimensionMismatch(f"input width {x.shape[-1]} != block width {self.channels}")
        return self.linear(x) + self.branches(x)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for w in (self.w0, self.wq, self.wk, self.wv, self.w1, self.w2):
            h.update(w.tobytes())
        return h.hexdigest()


def bml_forward(h_in, h_pose, block: ToyDitBlock, adapter: LoraAdapter):
    """Block output plus adapter output, both fed the same summed features."""
    h_in = np.asarray(h_in, dtype=np.float64)
    h_pose = np.asarray(h_pose, dtype=np.float64)
    if h_in.shape != h_pose.shape:
        raise DimensionMismatch(f"h_in {h_in.shape} and h_pose {h_pose.shape} differ")
    if adapter.channels != block.channels:
        raise DimensionMismatch("adapter and block widths differ")
    x = h_in + h_pose
    return block(x) + adapter(x)


def merge_adapter(block: ToyDitBlock, adapter: LoraAdapter) -> ToyDitBlock:
    """New block with the adapter folded into its input projection."""
    if adapter.channels != block.channels:
        raise DimensionMismatch("adapter and block widths differ")
    return replace(block, w0=block.w0 + adapter.delta_weight())


def adapter_loss_and_grads(h_in, h_pose, target, block, adapter):
    """Mean squared error of ``bml_forward`` against ``target`` and its
    gradients with respect to ``down`` and ``up``."""
    x = np.asarray(h_in, dtype=np.float64) + np.asarray(h_pose, dtype=np.float64)
    out = block(x) + adapter(x)
    resid = out - target
    loss = float(np.mean(resid ** 2))
    C = adapter.channels
    g = (2.0 * resid / resid.size).reshape(-1, C)
    x2 = x.reshape(-1, C)
    s = adapter.scale
    grad_up = s * g.T @ (x2 @ adapter.down.T)
    grad_down = s * (g @ adapter.up).T @ x2
    return loss, grad_down, grad_up


def train_adapter(h_in, h_pose, target, block, adapter, steps=100, lr=0.1):
    """Plain gradient descent on the adapter alone; the block stays frozen.

    Returns the trained adapter and the per-step loss log.
    """
    log = []
    for _ in range(steps):
        loss, gd, gu = adapter_loss_and_grads(h_in, h_pose, target, block, adapter)
        log.append(loss)
        adapter = LoraAdapter(adapter.down - lr * gd, adapter.up - lr * gu, adapter.alpha)
    loss, _, _ = adapter_loss_and_grads(h_in, h_pose, target, block, adapter)
    log.append(loss)
    return adapter, log
