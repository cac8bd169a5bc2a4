"""Stress-test the generalized Young (Schur test) inequality on random kernels.

Run:  python3 demos/04_young_inequality.py
"""
import numpy as np

from frostman.schur_young import (
    application_instance, brute_operator_norm_2_2, check_exponent_triple, random_instance,
    schur_bounds, verify_young_inequality,
)

for triple in ((1, 2, 2), (2, 2, float("inf")), (2, 2, 2)):
    chk = check_exponent_triple(*triple)
    print(f"triple {triple}: {'ok' if chk else 'rejected'} ({chk.reason})")

rng = np.random.default_rng(0)
worst = 0.0
for i in range(50):
    rep = verify_young_inequality(random_instance(rng), trials=300, seed=i, climb_steps=100)
    worst = max(worst, rep.max_ratio)
print(f"\n50 random instances: largest ratio {worst:.6f} (the inequality says <= 1)")

pts = rng.random((40, 2))
inst = application_instance(pts, np.full(40, 1 / 40), lam=64.0, p=4.0, n=2)
print("bracket-kernel instance:", verify_young_inequality(inst, trials=500).to_json())

inst = random_instance(rng, max_size=64, triple=(1, 2, 2))
A, B = schur_bounds(inst)
print(f"\nL2 operator norm {brute_operator_norm_2_2(inst):.6f} <= sqrt(A_1 B_1) = {np.sqrt(A * B):.6f}")
