"""Grow a random Cantor tree, look at its stage counts and estimate its dimension.

Run:  python3 demos/01_grow_cantor_tree.py
"""
import numpy as np

from frostman.cantor_core import build_schedule, serialize_tree, stage_measure
from frostman.measure_analysis import dimension_estimate
from frostman.random_cantor import GrowthConfig, count_statistics, grow_conditioned

# N_k = 4^k children per axis at stage k, each kept with probability 4^{-k/2}
schedule = build_schedule("dim-epsilon", 4, 0.5, 1, 6)
print("children per cube:", schedule.Nk)
print("keep probabilities:", np.round(schedule.p, 5))

tree = grow_conditioned(GrowthConfig(schedule, master_seed=7, pin_origin=True))
print("\nstage counts P_k and their ratio to the expected growth R_k")
for rec in count_statistics(tree).records:
    print(f"  k={rec.k}  P={rec.P:8d}  P/R={rec.ratio:6.3f}  flagged={rec.flag}")

est = dimension_estimate(tree)
print("\ncovering exponents log P_k / -log delta_k:", np.round(est.upper_seq, 4))
print(f"extrapolated dimension {est.estimate:.4f} (target {est.target})")

mu = stage_measure(tree, tree.depth)
print(f"\nfinest measure: {mu.size} atoms of mass {mu.weights[0]:.3e}, cell 2^{mu.cell_log2_size:g}")
print("serialized size:", len(serialize_tree(tree)), "bytes")
