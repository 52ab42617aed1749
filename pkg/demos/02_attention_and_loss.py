"""
Attention, percentile thresholds and the suppression loss
=========================================================

Random features go through one attention head over all video tokens. In
each background query row, entries that are both outside the epipolar band
and below the row's 30th percentile are suppressed; the loss is their mass.
"""
import numpy as np

from epipolar_attention import (ProjectionWeights, VideoLatent, attention_map,
                                epipolar_loss, flatten_latent, mask_volume,
                                suppression_mask, target_attention_map)
from epipolar_attention.constraint import l1_distance, pair_breakdown
from epipolar_attention.scenes import desk_scene

F, H, W, C = 4, 12, 9, 8
rng = np.random.default_rng(1)

latent = VideoLatent(rng.normal(size=(1, F, C, H, W)))
tokens, index = flatten_latent(latent)
print("tokens", tokens.shape, "token of (f=1, u=2, v=3):", index.token(1, 2, 3))

A = attention_map(tokens, ProjectionWeights.random(C, rng), dims=(F, H, W))
print("rows sum to one:", np.allclose(A.a.sum(-1), 1.0))

vol = mask_volume(desk_scene((F, H, W)).poses, (H, W))
# pretend the left third of every frame is foreground (the moving subject)
fg = np.array([index.token(f, u, v) for f in range(F) for v in range(H) for u in range(3)])
bg = np.setdiff1d(np.arange(F * H * W), fg)

omega = suppression_mask(A, vol, bg, p=30.0)
report = epipolar_loss(A, omega)
print("suppressed entries", report.suppressed_count, "loss", report.loss)

# the loss is exactly the L1 gap to the attention with those entries zeroed
target = target_attention_map(A, omega)
print("equals L1 to target:", report.loss == l1_distance(A.a, target))
print("loss by (query frame, key frame):\n", np.round(pair_breakdown(A, omega, (F, H, W)), 4))
