"""
Epipolar geometry and latent-resolution masks
=============================================

Two cameras, one sliding sideways. Every pixel of the first view maps to a
line in the second; the mask keeps the key pixels within one latent pixel of
that line.
"""
import numpy as np

from epipolar_attention import (epipolar_line, epipolar_mask, fundamental_matrix,
                                mask_volume)
from epipolar_attention.scenes import shared_points, translating_rig

H, W = 12, 16
poses = translating_rig(4, (H, W))
F01 = fundamental_matrix(poses[0], poses[1])
print("F (unit Frobenius norm):\n", np.round(F01.f, 4))

# a point seen by both cameras lands on its epipolar line
rng = np.random.default_rng(0)
X = shared_points(rng, poses[:2], 5)
x0, _ = poses[0].project(X)
x1, _ = poses[1].project(X)
print("algebraic residuals:", F01.residual(x0, x1))

line = epipolar_line(F01, x0[0])
print(f"line for {np.round(x0[0], 2)}: a={line.a:.4f} b={line.b:.4f} c={line.c:.4f}")

# the band around the line, as an ASCII picture
m = epipolar_mask(F01, (8, 6), (H, W), threshold=1.0)
for row in m.grid:
    print("".join("#" if b else "." for b in row))
print("popcount", m.popcount, "of", H * W)

# the whole (query, key) volume, bit-packed
vol = mask_volume(poses, (H, W))
print("volume tokens", vol.num_tokens, "packed bytes", vol.nbytes)
print("kept fraction per frame pair:\n", np.round(vol.pair_popcount_fraction(), 3))
