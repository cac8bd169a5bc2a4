"""Decay of sup_u A(u, lam) = sup_u int <lam (u - v)>^{-p/4} dmu(v) with n = 2.

Below the critical p* = 4 alpha the decay rate is p/4, above it saturates at alpha.

Run:  python3 demos/03_kernel_decay.py
"""
import numpy as np

from frostman.cantor_core import build_schedule, stage_measure
from frostman.kernel_lab import (
    ShellEvaluator, candidate_centers, critical_p_star, fit_decay_exponent, shell_decomposition,
)
from frostman.random_cantor import GrowthConfig, grow_conditioned

schedule = build_schedule("dim-epsilon", 4, 0.5, 1, 6)
mu = stage_measure(grow_conditioned(GrowthConfig(schedule, 0, pin_origin=True)), 6)
alpha = 0.5
lams = np.arange(4.0, 39.0, 2.0)
ev = ShellEvaluator(mu, candidate_centers(mu, lams))

print(f"critical p* = {critical_p_star(alpha, 2):g}")
for p in (0.5, 1.0, 2.0, 4.0, 8.0):
    fit = fit_decay_exponent(mu, p, 2, alpha, lams, evaluator=ev)
    tag = " (log-corrected)" if fit.meta["log_corrected"] else ""
    print(f"p={p:4g}: slope {fit.slope:+.4f}  target {fit.target:+.4f}{tag}")

terms, total = shell_decomposition(mu, [0.0], 2.0**20, 4.0, 2)
print("\ndyadic shells around the origin at lam = 2^20, p = 4 (largest contributions):")
for t in sorted(terms, key=lambda t: -t.contribution)[:5]:
    print(f"  shell j={t.j:3d}: mass {t.mass:.3e}, contribution {t.contribution:.3e}")
print(f"  total {total:.6e}")
