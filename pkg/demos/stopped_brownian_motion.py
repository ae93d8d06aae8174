"""Absorbed Brownian motion three ways: particles, the killed heat equation and
the method of images.

With no interaction every particle is an independent ``1 + sqrt(2) W`` killed
at 0, so the survival probability at time ``t`` is ``erf(1 / (2 sqrt t))`` and
the surviving density is a difference of two Gaussians.  The particle scheme
uses a Brownian-bridge test for crossings inside a step, which makes it exact
in law for this case; switching the test off shows the usual ``sqrt(dt)`` bias.
"""

import math

import numpy as np

from absorbchaos.fpe import FpeConfig, FrozenDrift, images_density, solve_linear_fpe
from absorbchaos.particle import SimConfig, simulate_batch

N, T = 100_000, 1.0
exact = math.erf(0.5)
print(f"exact survival at t=1: {exact:.5f}")

print("\nparticles (N = 1e5)")
print(f"{'steps':>6} {'bridge':>8} {'no bridge':>10}")
for n_steps in (25, 100, 400):
    row = []
    for bridge in (True, False):
        cfg = SimConfig(N, T, n_steps, seed=1, bridge_correction=bridge)
        pos, _ = simulate_batch(cfg, 1)
        row.append(np.mean(pos[-1, 0] > 0) - exact)
    print(f"{n_steps:>6} {row[0]:>+8.4f} {row[1]:>+10.4f}")
se = math.sqrt(exact * (1 - exact) / N)
print(f"(one standard error is {se:.4f})")

print("\nkilled heat equation from a narrow Gaussian at 1")
for h in (1e-2, 5e-3, 1e-3):
    cfg = FpeConfig(h=h, k=h, horizon=T, point_width=0.05)
    flow = solve_linear_fpe(cfg, FrozenDrift.zero(cfg))
    # the narrow Gaussian is the point mass run forward by w^2/2
    ref = images_density(1.0, T + 0.05**2 / 2, cfg.x)
    l1 = np.trapezoid(np.abs(flow.u[-1] - ref), cfg.x)
    print(f"h = k = {h:<6g} survival {flow.beta[-1]:.5f}  L1 error {l1:.2e}")
