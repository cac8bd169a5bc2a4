"""Growth of spherical-harmonic L^p norms restricted to a Cantor arc on S^2.

Run:  python3 demos/05_sphere_restriction.py
"""
from frostman.cantor_core import build_schedule, full_schedule, full_tree, stage_measure
from frostman.random_cantor import GrowthConfig, grow_conditioned
from frostman.sphere_restriction import (
    ArcMeasure, degree_grid, exponent_table, fit_restriction_exponent, table_csv,
)

schedule = build_schedule("dim-epsilon", 4, 0.5, 1, 6)
tree = grow_conditioned(GrowthConfig(schedule, 0, pin_origin=True))
cantor = ArcMeasure(stage_measure(tree, 6), length=1.0)
lebesgue = ArcMeasure(stage_measure(full_tree(full_schedule(2, 1, 16)), 16))
equator = ArcMeasure(lebesgue.base, placement="equator")

row = exponent_table(2, 1, 0.5, 8)
print(f"p = 8: theta = {row.theta}, kappa = {row.kappa}, vartheta = {row.vartheta}")

degrees = degree_grid(16, 512)
for name, arc, kind, target in (("Cantor arc", cantor, "zonal", float(row.theta)),
                                ("full arc", lebesgue, "zonal", 0.375),
                                ("equator", equator, "highest_weight", 0.25)):
    fit = fit_restriction_exponent(kind, arc, 8, degrees, target)
    print(f"{kind:15s} on {name:10s}: slope {fit.slope:.4f} (expected {target:.4f})")

print()
print(table_csv([exponent_table(2, 1, 0.5, p) for p in (2, 4, 6, 8, "inf")]))
