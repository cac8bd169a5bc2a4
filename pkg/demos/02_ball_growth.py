"""Ball-mass profiles: the upper sup and the lower profile at the pinned origin.

With the correct exponent the normalized sup mu(B(x, r)) / r^alpha stays flat in r;
a wrong exponent shows up as a power-law drift.

Run:  python3 demos/02_ball_growth.py
"""
import numpy as np

from frostman.cantor_core import build_schedule, stage_measure
from frostman.measure_analysis import (
    fit_slow_growth_R, log2_radius_grid, lower_ball_profile, upper_ball_profile,
)
from frostman.random_cantor import GrowthConfig, grow_conditioned

schedule = build_schedule("dim-epsilon", 4, 0.5, 1, 6)
tree = grow_conditioned(GrowthConfig(schedule, 3, pin_origin=True))
mu = stage_measure(tree, 6)
radii = log2_radius_grid(-26, -16, per_octave=2)

for alpha in (0.5, 0.7):
    prof = upper_ball_profile(mu, None, radii, alpha, tree=tree, candidate_cap=20_000)
    r, sup = prof.extreme_by_radius()
    slope = -np.polyfit(r, np.log2(sup), 1)[0]
    print(f"alpha={alpha}: sup ratio ranges {sup.min():.3f}..{sup.max():.3f}, growth exponent {slope:+.3f}")

low = lower_ball_profile(mu, [0.0], radii, 0.5, tree=tree)
R = fit_slow_growth_R(low.log2_r, low.ratio, "lower")
print(f"\nlower profile at the origin: min {low.ratio.min():.3f}, max {low.ratio.max():.3f}, fitted R = {R:.3f}")
for lr, m, f in zip(low.log2_r[::4], low.mass[::4], low.floor_mass[::4]):
    print(f"  r=2^{lr:6.1f}  mass={m:.3e}  guaranteed floor={f:.3e}")
