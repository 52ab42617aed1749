"""Training objective: latent noise loss, one-step clean-latent recovery,
hand-weighted perceptual loss and their weighted total."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .errors import DegenerateSchedule, DimensionMismatch

LAMBDA_VGG = 0.2
LAMBDA_EPIPOLAR = 0.005
# perceptual loss only runs in the final fraction of denoising steps
VGG_FRACTION = (3, 10)


@dataclass(frozen=True)
class NoisySample:
    z_t: np.ndarray
    t: int
    alpha_bar: float
    epsilon: np.ndarray | None = None


def linear_alpha_bar(num_steps=1000, beta_start=1e-4, beta_end=0.02):
    """Cumulative products of (1 - beta) for a linear beta schedule."""
    betas = np.linspace(beta_start, beta_end, num_steps)
    return np.cumprod(1.0 - betas)


def add_noise(z0, eps, alpha_bar, t=0) -> NoisySample:
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise DimensionMismatch(f"latent {z0.shape} and noise {eps.shape} differ")
    z_t = math.sqrt(alpha_bar) * z0 + math.sqrt(1.0 - alpha_bar) * eps
    return NoisySample(z_t, t, float(alpha_bar), eps)


def latent_loss(eps_pred, eps_true) -> float:
    """Mean squared error between predicted and true noise."""
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    eps_true = np.asarray(eps_true, dtype=np.float64)
    if eps_pred.shape != eps_true.shape:
        raise DimensionMismatch(f"prediction {eps_pred.shape} and target {eps_true.shape} differ")
    return float(np.mean((eps_pred - eps_true) ** 2))


def one_step_x0(sample: NoisySample, eps_pred) -> np.ndarray:
    """Clean latent implied by a single noise prediction."""
    ab = sample.alpha_bar
    if not ab > 1e-12 or ab > 1.0:
        raise DegenerateSchedule(f"alpha_bar must lie in (1e-12, 1], got {ab}")
    return (sample.z_t - math.sqrt(1.0 - ab) * np.asarray(eps_pred)) / math.sqrt(ab)


class LinearDenoiser:
    """Stand-in noise predictor: a fixed channel-mixing matrix on axis ``axis``."""

    def __init__(self, weight, axis=-3):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.axis = axis

    def __call__(self, z_t):
        z = np.moveaxis(np.asarray(z_t, dtype=np.float64), self.axis, -1)
        return np.moveaxis(z @ self.weight.T, -1, self.axis)


class FeatureExtractor(Protocol):
    def __call__(self, frames: np.ndarray) -> Sequence[np.ndarray]:
        """Map (N, H, W[, C]) frames to feature maps (N, C_s, H_s, W_s), one per
        scale, where scale s is downsampled by ``2**s``."""


def _as_nchw(frames):
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim == 3:
        return x[:, None]
    if x.ndim == 4:
        return x.transpose(0, 3, 1, 2)
    raise DimensionMismatch(f"frames must be (N, H, W) or (N, H, W, C), got {x.shape}")


def avg_pool(x, k):
    """Non-overlapping k x k mean pooling over the last two axes."""
    if k == 1:
        return x
    *lead, H, W = x.shape
    return x.reshape(*lead, H // k, k, W // k, k).mean(axis=(-3, -1))


def conv3x3(x, kernels):
    """Same-size 3x3 cross-correlation with edge padding.

    x: (N, Cin, H, W); kernels: (Cout, Cin, 3, 3).
    """
    N, Cin, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    out = np.zeros((N, kernels.shape[0], H, W))
    for dy in range(3):
        for dx in range(3):
            out += np.einsum("nchw,oc->nohw", xp[:, :, dy:dy + H, dx:dx + W], kernels[:, :, dy, dx])
    return out


class RandomConvFeatures:
    """Deterministic stand-in for a pretrained perceptual network.

    At scale s the input is mean-pooled by ``2**s``, then passed through a
    fixed random 3x3 convolution and ``tanh``.
    """

    def __init__(self, seed=0, channels=4, scales=3, in_channels=1):
        rng = np.random.default_rng(seed)
        self.scales = scales
        self.kernels = [rng.normal(0.0, 1.0 / 3.0, (channels, in_channels, 3, 3))
                        for _ in range(scales)]

    def __call__(self, frames):
        x = _as_nchw(frames)
        return [np.tanh(conv3x3(avg_pool(x, 2 ** s), k)) for s, k in enumerate(self.kernels)]


def perceptual_loss(v_hat, v, m, fx: FeatureExtractor) -> float:
    """Feature-space squared distance weighted by ``1 + m``.

    Per scale, the per-pixel squared L2 feature distance is upsampled back to
    frame resolution (nearest neighbour), weighted so hand pixels count
    double, and averaged over pixels; the result is averaged over scales.
    """
    v_hat = np.asarray(v_hat, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    m = np.asarray(m, dtype=bool)
    if v_hat.shape != v.shape:
        raise DimensionMismatch(f"generated {v_hat.shape} and target {v.shape} frames differ")
    N, H, W = v.shape[:3]
    if m.shape != (N, H, W):
        raise DimensionMismatch(f"hand mask {m.shape} does not match frames {(N, H, W)}")
    weight = 1.0 + m
    per_scale = []
    for fh, ft in zip(fx(v_hat), fx(v)):
        d = ((fh - ft) ** 2).sum(axis=1)
        ky, kx = H // d.shape[1], W // d.shape[2]
        if d.shape[1] * ky != H or d.shape[2] * kx != W:
            raise DimensionMismatch(f"feature map {d.shape[1:]} does not tile frame {(H, W)}")
        up = np.repeat(np.repeat(d, ky, axis=1), kx, axis=2)
        per_scale.append(float(np.mean(weight * up)))
    return float(np.mean(per_scale))


def total_loss(l_latent, l_vgg, l_epipolar,
               lambda_vgg=LAMBDA_VGG, lambda_epipolar=LAMBDA_EPIPOLAR) -> float:
    if min(l_latent, l_vgg, l_epipolar) < 0:
        raise ValueError("loss terms must be non-negative")
    return l_latent + lambda_vgg * l_vgg + lambda_epipolar * l_epipolar


def vgg_gate(t, schedule_len) -> bool:
    """True on the final 30% of denoising steps (t counts down to 0)."""
    if not 0 <= t < schedule_len:
        raise ValueError(f"timestep {t} outside [0, {schedule_len})")
    num, den = VGG_FRACTION
    return den * t < num * schedule_len
