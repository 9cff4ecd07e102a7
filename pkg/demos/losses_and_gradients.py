"""MIO, InfoNCE and MIO+L2 on one random batch, with a finite-difference check.

Run: python3 demos/losses_and_gradients.py
"""

import numpy as np

from miolab.losses import LossConfig, get_loss
from miolab.numerics import Rng
from miolab.pairing import build_pairs



def central_diff(f, z, h=1e-5):
    g = np.empty_like(z)
    for idx in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += h
        zm[idx] -= h
        g[idx] = (f(zp) - f(zm)) / (2 * h)
    return g


n, d = 4, 8
z = Rng(0).normal(size=(2 * n, d))
pairs = build_pairs(n)
print(f"batch of {n} samples -> {pairs.n_views} views, {pairs.t_p} positive and {pairs.t_n} negative ordered pairs")

for name in ("mio", "infonce", "mio_l2"):
    for mode in ("dot", "cosine"):
        cfg = LossConfig(tau=0.5, lam=1.0, mode=mode)
        fn = get_loss(name)
        rep = fn(z, pairs, cfg)
        numeric = central_diff(lambda v: fn(v, pairs, cfg).value, z)
        err = np.max(np.abs(numeric - rep.grad_z)) / np.max(np.abs(numeric))
        print(f"{name:8s} {mode:6s} loss={rep.value:9.5f}  grad rel err={err:.1e}")
