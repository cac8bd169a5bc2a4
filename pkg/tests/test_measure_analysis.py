import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frostman.cantor_core import (
    build_schedule, custom_schedule, full_schedule, full_tree, point_measure, refine_stage,
    empty_tree, stage_measure, tree_from_coordinates,
)
from frostman.experiments import _window_variation
from frostman.measure_analysis import (
    ball_mass, candidate_centers, decade_windows, dimension_estimate, fit_slow_growth_R,
    log2_radius_grid, lower_ball_profile, mass_distribution_measure, slow_growth_phi,
    upper_ball_profile, weak_star_gap,
)
from frostman.random_cantor import GrowthConfig, descendant_counts, grow_conditioned

EPS5 = build_schedule("dim-epsilon", 4, 0.5, 1, 5)
EPS6 = build_schedule("dim-epsilon", 4, 0.5, 1, 6)


@pytest.fixture(scope="module")
def trees6():
    return [grow_conditioned(GrowthConfig(EPS6, s)) for s in range(20)]


def test_ball_mass_examples():
    t = grow_conditioned(GrowthConfig(EPS5, 0))
    mu = stage_measure(t, 5)
    assert ball_mass(mu, [0.5], 1.0) == pytest.approx(1.0, abs=1e-12)
    s = custom_schedule([4, 7], d=1)
    fig = stage_measure(refine_stage(empty_tree(s), 1, np.array([[1, 0, 0, 1]])), 1)
    # each end cube meets [0.2, 0.8] in a fifth of its length
    assert ball_mass(fig, [0.5], 0.3) == pytest.approx(0.2, abs=1e-12)
    pm = point_measure([[0.25], [0.75]], [0.5, 0.5])
    assert ball_mass(pm, [0.5], 0.3) == pytest.approx(1.0)
    assert ball_mass(pm, [0.5], 0.2) == 0.0
    # a ball of radius delta_k at a stage-k anchor covers that cube
    for k in range(1, 6):
        a = t.cubes(k)[-1].astype(float) / EPS5.M(k)
        assert ball_mass(stage_measure(t, k), a, EPS5.delta(k)) >= 1 / t.P[k - 1] - 1e-12


def test_figure_measure_full_overlap():
    s = custom_schedule([4, 7], d=1)
    fig = stage_measure(refine_stage(empty_tree(s), 1, np.array([[1, 0, 0, 1]])), 1)
    assert ball_mass(fig, [0.5], 0.5) == pytest.approx(1.0)
    assert ball_mass(fig, [0.5], 0.25) == pytest.approx(0.0, abs=1e-15)


def test_ball_mass_matches_brute_force_2d():
    t = grow_conditioned(GrowthConfig(build_schedule("dim-epsilon", 4, 0.5, 2, 3), 1))
    mu = stage_measure(t, 3)
    rng = np.random.default_rng(3)
    c = rng.random((20, 2))
    r = 2.0 ** rng.uniform(-8, -1, 20)
    fast = ball_mass(mu, c, r)
    for q in range(20):
        ov = np.clip(np.minimum(mu.anchors + mu.cell, c[q] + r[q]) - np.maximum(mu.anchors, c[q] - r[q]), 0, None)
        assert fast[q] == pytest.approx(np.sum(mu.weights * np.prod(ov / mu.cell, axis=1)), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.floats(-20, 0), st.floats(0.01, 3))
def test_ball_mass_monotone_in_radius(c, lr, grow_by):
    t = grow_conditioned(GrowthConfig(EPS5, 2))
    mu = stage_measure(t, 5)
    r = 2.0**lr
    assert ball_mass(mu, [c], r) <= ball_mass(mu, [c], r * (1 + grow_by)) + 1e-15


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-6, -1))
def test_euclidean_sandwich_2d(seed, lr):
    rng = np.random.default_rng(seed)
    pts = rng.random((200, 2))
    pm = point_measure(pts)
    c = rng.random(2)
    r = 2.0**lr
    dist = np.linalg.norm(pm.anchors - c, axis=1)
    l2 = np.sum(pm.weights[dist <= r])
    assert ball_mass(pm, c, r / math.sqrt(2)) <= l2 + 1e-12
    assert l2 <= ball_mass(pm, c, r) + 1e-12


def test_ball_contains_cube_lower_bound():
    t = grow_conditioned(GrowthConfig(EPS5, 5))
    mu = stage_measure(t, 5)
    rep = descendant_counts(t, 2, 5)
    for i in range(0, t.P[1], 7):
        a = t.cubes(2)[i, 0] / EPS5.M(2)
        mass = ball_mass(mu, [a + EPS5.delta(2) / 2], EPS5.delta(2) / 2)
        assert mass >= rep.counts[i] / t.P[4] - 1e-12


def test_lebesgue_upper_profile_bounded_by_two_to_d():
    for d in (1, 2):
        s = full_schedule(2, d, 14 if d == 1 else 7)
        mu = stage_measure(full_tree(s), s.K)
        lr = log2_radius_grid(-6, -2, 2)
        rng = np.random.default_rng(0)
        prof = upper_ball_profile(mu, rng.random((30, d)), lr, alpha=d)
        assert prof.ratio.max() <= 2**d + 1e-9
        _, sup = prof.extreme_by_radius()
        assert sup.max() / sup.min() < 1.2


def test_lebesgue_lower_profile():
    mu = stage_measure(full_tree(full_schedule(2, 1, 14)), 14)
    prof = lower_ball_profile(mu, [0.5], log2_radius_grid(-10, -2, 4), alpha=1)
    assert np.allclose(prof.ratio, 2.0)


def test_lower_profile_rejects_point_off_support():
    t = grow_conditioned(GrowthConfig(EPS5, 0))
    mu = stage_measure(t, 5)
    x = np.sort(t.cubes(5)[:, 0])
    gap = int(np.argmax(np.diff(x)))
    v = (x[gap] + 2.5) / EPS5.M(5)
    with pytest.raises(ValueError, match="not within"):
        lower_ball_profile(mu, [v], [-5.0], alpha=0.5)


def test_candidate_centers_shape():
    t = grow_conditioned(GrowthConfig(EPS5, 0))
    c = candidate_centers(t, -8.0, n_random=5, cap=50)
    assert c.shape[1] == 1 and c.shape[0] <= 50 + 100 + 5


def test_misspecified_alpha_grows(trees6):
    slopes = []
    for t in trees6[:4]:
        mu = stage_measure(t, 6)
        lr = log2_radius_grid(-26, -16, 2)
        prof = upper_ball_profile(mu, None, lr, alpha=0.7, tree=t, candidate_cap=20_000)
        r, sup = prof.extreme_by_radius()
        slopes.append(-np.polyfit(r, np.log2(sup), 1)[0])
    assert np.mean(slopes) == pytest.approx(0.2, abs=0.07)


def test_correct_alpha_upper_profile_flat(trees6):
    t = trees6[0]
    mu = stage_measure(t, 6)
    lr = log2_radius_grid(-26, -16, 2)
    r, sup = upper_ball_profile(mu, None, lr, alpha=0.5, tree=t, candidate_cap=20_000).extreme_by_radius()
    assert abs(np.polyfit(r, np.log2(sup), 1)[0]) < 0.07


def test_pinned_lower_profile_per_decade():
    # radii between the stage-5 and stage-2 scales, inf taken per decade window
    top = EPS5.log2_delta[1]
    n = int((EPS5.log2_delta[1] - EPS5.log2_delta[4]) / math.log2(10))
    windows = decade_windows(top, n)
    lr = log2_radius_grid(windows[-1][0], top, 8)
    for seed in range(5):
        t = grow_conditioned(GrowthConfig(EPS5, seed, pin_origin=True))
        prof = lower_ball_profile(stage_measure(t, 5), [0.0], lr, alpha=0.5, tree=t)
        var, _, _ = _window_variation(lr, prof.ratio, windows, "lower")
        assert var <= 8
        ok = ~np.isnan(prof.floor_mass)
        assert np.all(prof.mass[ok] >= prof.floor_mass[ok] - 1e-15)


def test_fit_R_recovers_growth():
    lr = np.linspace(-40, -4, 50)
    s = np.sqrt(-lr * math.log(2))
    vals = 3.0 * np.exp(1.5 * s)
    assert fit_slow_growth_R(lr, vals, "upper") == pytest.approx(1.5, abs=1e-5)
    assert fit_slow_growth_R(lr, 3.0 / np.exp(0.7 * s), "lower") == pytest.approx(0.7, abs=1e-5)
    assert fit_slow_growth_R(lr, np.full(50, 2.0), "upper") == 0.0


def test_slow_growth_phi():
    assert slow_growth_phi(0, 123.0) == 1.0
    assert slow_growth_phi(1, math.e) == pytest.approx(math.e)
    with pytest.raises(ValueError):
        slow_growth_phi(1, 0.5)
    # Phi_R(t) t^{-kappa} is decreasing once ln t >= (R / 2 kappa)^2
    R, kappa = 2.0, 0.1
    lt = np.linspace((R / (2 * kappa)) ** 2, 2000, 500)
    y = R * np.sqrt(lt) - kappa * lt
    assert np.all(np.diff(y) <= 1e-12)
    # and Phi_R grows slower than any power
    t = np.exp(np.array([500.0, 700.0]))
    assert np.all(np.log(slow_growth_phi(R, t)) < kappa * np.log(t))


def test_dimension_estimate_full_tree_exact():
    for d in (1, 2):
        s = build_schedule("dim-epsilon", 4, 0.5, d, 5)
        P = np.cumprod([n**d for n in s.Nk])
        est = dimension_estimate(s, P)
        assert np.allclose(est.upper_seq, d)
        assert est.estimate == pytest.approx(d)


def test_dimension_estimate_random_trees():
    est = [dimension_estimate(grow_conditioned(GrowthConfig(EPS5, s))).estimate for s in range(10)]
    assert np.mean(est) == pytest.approx(0.5, abs=0.05)
    with pytest.raises(ValueError):
        dimension_estimate(EPS5, [4, 0, 0, 0, 0])


def test_weak_star_gap_basic(trees6):
    t = trees6[0]
    assert weak_star_gap(t, 3, 3) == 0.0
    assert weak_star_gap(full_tree(EPS5, 4), 2, 4) == 0.0
    # same sum through the descendant counts
    q = descendant_counts(t, 2, 5).counts
    direct = np.abs(q / t.P[4] - 1 / t.P[1]).sum()
    assert weak_star_gap(t, 2, 5) == pytest.approx(direct, rel=1e-12)
    with pytest.raises(ValueError):
        weak_star_gap(t, 4, 2)


def test_weak_star_gap_shrinks_with_k(trees6):
    med = [np.median([weak_star_gap(t, k, k + 2) for t in trees6]) for k in (2, 3, 4)]
    assert med[0] > med[1] > med[2]


def test_mass_distribution_equal_children():
    s = build_schedule("dim-epsilon", 4, 0.5, 1, 3)
    t = full_tree(s)
    a, b = mass_distribution_measure(t), stage_measure(t, 3)
    assert np.allclose(a.weights, b.weights)


def test_mass_distribution_half_interval():
    K = 6
    s = full_schedule(2, 1, K)
    stages = [[[0], [1]]]
    for k in range(2, K + 1):
        M = 2**k
        left = [[i] for i in range(M // 2)]
        stages.append(left + [[M // 2]])
    t = tree_from_coordinates(s, stages)
    mu = mass_distribution_measure(t)
    # uniform density one on [0, 1/2] plus an atom of 1/2 in the cell at 1/2
    assert mu.weights[-1] == pytest.approx(0.5)
    assert np.allclose(mu.weights[:-1], 2.0**-K)
    assert ball_mass(mu, [0.125], 0.125) == pytest.approx(0.25)
    # the uniform stage measure weights cells equally instead
    assert stage_measure(t, K).weights[-1] == pytest.approx(1 / (2 ** (K - 1) + 1))


def test_mass_distribution_loses_mass_on_dead_branch():
    s = full_schedule(2, 1, 3)
    t = tree_from_coordinates(s, [[[0], [1]], [[0], [1]], [[0], [1], [2]]])
    mu = mass_distribution_measure(t)
    assert math.fsum(mu.weights) == pytest.approx(0.5)
