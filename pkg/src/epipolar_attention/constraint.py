"""Adaptive suppression of off-epipolar attention and the resulting loss.

An attention entry (q, k) is suppressed when q is a background query, k lies
outside q's epipolar mask, and A[q, k] is strictly below the query's
percentile threshold. The loss is the attention mass on suppressed entries.
Within one loss/gradient evaluation the suppression pattern is a constant:
no gradient flows through the threshold or the mask.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import DEFAULT_PERCENTILE, AttentionMap, row_thresholds, softmax
from .epipolar import EpipolarMaskVolume
from .errors import DimensionMismatch, NonFiniteInput


@dataclass(frozen=True)
class SuppressionMask:
    omega: np.ndarray  # (B, L, L) bool
    dims: tuple
    active_queries: np.ndarray  # sorted background token indices

    @property
    def count(self):
        return int(self.omega.sum())


@dataclass(frozen=True)
class EpipolarLossReport:
    loss: float
    suppressed_mass_per_query: np.ndarray  # (B, L)
    suppressed_count: int


def _dense_mask(M, L):
    if isinstance(M, EpipolarMaskVolume):
        if M.num_tokens != L:
            raise DimensionMismatch(f"mask volume dims {M.dims} do not match {L} tokens")
        return M.dense()
    M = np.asarray(M, dtype=bool)
    if M.shape != (L, L):
        raise DimensionMismatch(f"mask of shape {M.shape} does not match {L} tokens")
    return M


def background_rows(bg, L):
    """Boolean (L,) indicator for a collection of background token indices."""
    active = np.zeros(L, dtype=bool)
    idx = np.asarray(list(bg) if not isinstance(bg, np.ndarray) else bg, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= L):
        raise DimensionMismatch(f"background token index outside [0, {L})")
    active[idx] = True
    return active


def suppression_mask(A: AttentionMap, M, bg, p=DEFAULT_PERCENTILE, mode="row") -> SuppressionMask:
    """Omega = background rows AND outside epipolar mask AND (A < delta)."""
    a = A.a
    L = a.shape[-1]
    if A.dims is not None and np.prod(A.dims) != L:
        raise DimensionMismatch(f"attention dims {A.dims} do not match {L} tokens")
    if isinstance(M, EpipolarMaskVolume) and tuple(M.dims) != tuple(A.dims):
        raise DimensionMismatch(f"mask dims {M.dims} != attention dims {A.dims}")
    outside = ~_dense_mask(M, L)
    active = background_rows(bg, L)
    delta = row_thresholds(a, p, A.dims, mode=mode)
    omega = (a < delta) & outside & active[:, None]
    return SuppressionMask(omega, A.dims, np.flatnonzero(active))


def _weights(A):
    return A.a if isinstance(A, AttentionMap) else np.asarray(A, dtype=np.float64)


def epipolar_loss(A, omega: SuppressionMask) -> EpipolarLossReport:
    """Sum of attention mass over suppressed entries, summed over the batch."""
    a = _weights(A)
    om = omega.omega if isinstance(omega, SuppressionMask) else np.asarray(omega, dtype=bool)
    if om.shape != np.shape(a) and om.shape != np.shape(a)[-2:]:
        raise DimensionMismatch(f"omega {om.shape} does not match attention {np.shape(a)}")
    per_query = np.where(om, a, 0.0).sum(axis=-1)
    count = int(np.count_nonzero(np.broadcast_to(om, np.shape(a))))
    return EpipolarLossReport(float(per_query.sum()), per_query, count)


def target_attention_map(A, omega: SuppressionMask) -> np.ndarray:
    """Attention with suppressed entries zeroed."""
    a = _weights(A)
    om = omega.omega if isinstance(omega, SuppressionMask) else np.asarray(omega, dtype=bool)
    return np.where(om, 0.0, a)


def l1_distance(a, target) -> float:
    """Entrywise L1 distance, summed in the same order as ``epipolar_loss``."""
    return float(np.abs(np.asarray(a) - np.asarray(target)).sum(axis=-1).sum())


def pair_breakdown(A, omega: SuppressionMask, dims) -> np.ndarray:
    """(F, F) suppressed mass per (query frame, key frame), summed over the batch."""
    a = _weights(A)
    om = omega.omega if isinstance(omega, SuppressionMask) else np.asarray(omega, dtype=bool)
    F, H, W = dims
    hw = H * W
    masked = np.where(om, a, 0.0).reshape(-1, F, hw, F, hw)
    return masked.sum(axis=(0, 2, 4))


def frozen_loss(logits, omega) -> float:
    """Suppressed softmax mass as a function of the logits, omega held fixed."""
    om = omega.omega if isinstance(omega, SuppressionMask) else np.asarray(omega, dtype=bool)
    a = softmax(logits)
    return float(np.where(om, a, 0.0).sum())


def epipolar_loss_grad(logits, omega) -> np.ndarray:
    """d(frozen_loss)/d(logits): per row, A_k * (w_k - sum_m w_m A_m)."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFiniteInput("logits contain NaN or Inf")
    om = omega.omega if isinstance(omega, SuppressionMask) else np.asarray(omega, dtype=bool)
    if om.shape[-2:] != z.shape[-2:]:
        raise DimensionMismatch(f"omega {om.shape} does not match logits {z.shape}")
    a = softmax(z)
    w = om.astype(np.float64)
    s = (w * a).sum(axis=-1, keepdims=True)
    return a * (w - s)


def out_of_mask_mass(A, M, bg) -> float:
    """Attention mass that background queries place outside their epipolar masks."""
    a = _weights(A)
    L = a.shape[-1]
    outside = ~_dense_mask(M, L)
    active = background_rows(bg, L)
    return float(np.where(outside & active[:, None], a, 0.0).sum())
