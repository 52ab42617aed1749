"""
Noise loss, one-step clean latent and the hand-weighted perceptual loss
=======================================================================
"""
import numpy as np

from epipolar_attention import (RandomConvFeatures, add_noise, latent_loss,
                                linear_alpha_bar, one_step_x0, perceptual_loss,
                                total_loss, vgg_gate)

rng = np.random.default_rng(3)
alpha_bar = linear_alpha_bar(1000)

z0 = rng.normal(size=(1, 4, 4, 8, 8))
eps = rng.normal(size=z0.shape)
t = 200
sample = add_noise(z0, eps, alpha_bar[t], t)

# a slightly wrong noise guess
eps_hat = eps + 0.1 * rng.normal(size=eps.shape)
print("latent loss", latent_loss(eps_hat, eps))
x0 = one_step_x0(sample, eps_hat)
print("clean-latent error", np.linalg.norm(x0 - z0))

# perceptual loss on frames, hand pixels count double
fx = RandomConvFeatures(seed=0)
v = rng.uniform(size=(2, 16, 16))
v_hat = v + 0.05 * rng.normal(size=v.shape)
hands = np.zeros(v.shape, dtype=bool)
hands[:, 4:10, 6:12] = True
l_none = perceptual_loss(v_hat, v, np.zeros_like(hands), fx)
l_hands = perceptual_loss(v_hat, v, hands, fx)
print(f"perceptual loss {l_none:.5f}, with hand weighting {l_hands:.5f}")

# the perceptual term only runs on the last 30% of denoising steps
print("gate at t=299, 300:", vgg_gate(299, 1000), vgg_gate(300, 1000))
print("total", total_loss(1.0, 0.5, 2.0))
