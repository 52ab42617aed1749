"""
A low-rank motion adapter on a frozen block
===========================================

The adapter starts with a zero up-projection, so it changes nothing. After
fitting it to a target shift it can be folded into the block's weights.
"""
import numpy as np

from epipolar_attention import LoraAdapter, ToyDitBlock, bml_forward, merge_adapter
from epipolar_attention.adapters import train_adapter

C, r = 8, 2
rng = np.random.default_rng(2)
block = ToyDitBlock.random(C, rng)
h_in = rng.normal(size=(2, 6, C))
h_pose = rng.normal(size=(2, 6, C))

ad = LoraAdapter.init(C, r, rng)
same = bml_forward(h_in, h_pose, block, ad).tobytes() == block(h_in + h_pose).tobytes()
print("zero-init adapter is neutral:", same)

# a target the block alone cannot produce: a hidden rank-2 correction
hidden = LoraAdapter(rng.normal(size=(r, C)), rng.normal(size=(C, r)), r)
target = block(h_in + h_pose) + hidden(h_in + h_pose)

before = block.checksum()
ad, log = train_adapter(h_in, h_pose, target, block, ad, steps=300, lr=0.05)
print(f"loss {log[0]:.4f} -> {log[-1]:.6f}; base weights untouched:", block.checksum() == before)

merged = merge_adapter(block, ad)
x = rng.normal(size=(1, 50, C))
gap = np.abs(merged(x) - bml_forward(x, np.zeros_like(x), block, ad)).max()
print("merge gap", gap)
print("singular values of the update:", np.round(np.linalg.svd(ad.delta_weight(), compute_uv=False), 6))
