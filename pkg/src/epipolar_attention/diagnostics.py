"""Gradient checking and the toy suppression-training loop."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionMap, softmax
from .constraint import (epipolar_loss, epipolar_loss_grad, frozen_loss,
                         out_of_mask_mass, suppression_mask)
from .epipolar import mask_volume

FD_STEP = 1e-5
GRADCHECK_TOL = 1e-6
# below this sup-norm a gradient is judged on absolute error; finite-difference
# roundoff alone is ~1e-11 at FD_STEP
GRAD_SCALE_FLOOR = 1e-4


def central_difference(f, x, h=FD_STEP):
    """Elementwise central differences of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = f(x)
        flat[k] = orig - h
        fm = f(x)
        flat[k] = orig
        gflat[k] = (fp - fm) / (2.0 * h)
    return g


def relative_error(analytic, numeric, floor=GRAD_SCALE_FLOOR):
    """max |a - n| relative to the largest gradient magnitude, floored at ``floor``."""
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def gradcheck_instance(rng, L, p=30.0, density=0.3):
    """Random logits and a suppression pattern produced by the real pipeline."""
    logits = rng.normal(0.0, 1.5, (L, L))
    M = rng.random((L, L)) < density
    bg = np.flatnonzero(rng.random(L) < 0.7)
    omega = suppression_mask(AttentionMap(softmax(logits), (1, 1, L)), M, bg, p)
    return logits, omega.omega[0]


@dataclass
class GradcheckResult:
    passed: bool
    max_rel_error: float
    worst_seed: int
    errors: list = field(default_factory=list)


def run_gradcheck(seed=0, sizes=(1, 5, 16, 33, 48), instances=20, grad_fn=epipolar_loss_grad,
                  tol=GRADCHECK_TOL):
    errors = []
    for k in range(instances):
        inst_seed = seed * 1000 + k
        rng = np.random.default_rng(inst_seed)
        L = int(sizes[k % len(sizes)])
        logits, omega = gradcheck_instance(rng, L)
        analytic = grad_fn(logits, omega)
        numeric = central_difference(lambda z: frozen_loss(z, omega), logits)
        errors.append((inst_seed, L, relative_error(analytic, numeric)))
    worst = max(errors, key=lambda e: e[2])
    return GradcheckResult(worst[2] < tol, worst[2], worst[0], errors)


@dataclass
class DemoLog:
    steps: list  # (step, loss, out_mass, suppressed_count)

    @property
    def initial_mass(self):
        return self.steps[0][2]

    @property
    def final_mass(self):
        return self.steps[-1][2]

    @property
    def losses(self):
        return [s[1] for s in self.steps]

    def nonincreasing_fraction(self):
        losses = self.losses
        if len(losses) < 2:
            return 1.0
        ok = sum(b <= a for a, b in zip(losses, losses[1:]))
        return ok / (len(losses) - 1)


def demo_train(poses, dims, steps=200, lr=0.05, seed=7, threshold=1.0, p=30.0, bg=None,
               logit_scale=1.0, volume=None):
    """Gradient descent on free attention logits against the epipolar loss.

    Omega is recomputed from the current attention before every step and held
    fixed for that step's gradient. ``bg=None`` treats every token as background.
    """
    F, H, W = dims
    L = F * H * W
    M = mask_volume(poses, (H, W), threshold) if volume is None else volume
    M_dense = M.dense()
    bg = np.arange(L) if bg is None else np.asarray(bg, dtype=np.int64)
    rng = np.random.default_rng(seed)
    z = rng.normal(0.0, logit_scale, (L, L))
    log = []
    for step in range(steps + 1):
        A = AttentionMap(softmax(z), dims)
        omega = suppression_mask(A, M_dense, bg, p)
        report = epipolar_loss(A, omega)
        log.append((step, report.loss, out_of_mask_mass(A, M_dense, bg), report.suppressed_count))
        if step == steps:
            break
        z = z - lr * epipolar_loss_grad(z, omega.omega[0])
    return DemoLog(log), softmax(z)
