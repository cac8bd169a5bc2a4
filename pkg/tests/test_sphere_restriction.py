import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from frostman.cantor_core import build_schedule, full_schedule, full_tree, stage_measure
from frostman.kernel_lab import ResolutionError
from frostman.random_cantor import GrowthConfig, grow_conditioned
from frostman.sphere_restriction import (
    TABLE_COLUMNS, ArcMeasure, bgt_delta, degree_grid, exponent_table, fit_restriction_exponent,
    highest_weight_const, highest_weight_value, highest_weight_wallis, kappa, legendre_P,
    legendre_table, restriction_norm, sogge_delta, table_csv, theta, vartheta, zonal_l2_norm,
    zonal_value,
)

F = Fraction


@pytest.fixture(scope="module")
def lebesgue_base():
    return stage_measure(full_tree(full_schedule(2, 1, 16)), 16)


def test_legendre_examples():
    assert legendre_P(0, 0.3) == 1.0
    assert legendre_P(1, 0.5) == 0.5
    assert legendre_P(2, 0.5) == pytest.approx(-0.125, abs=1e-15)
    assert np.allclose(legendre_table(range(0, 4097, 512), 1.0), 1.0, atol=1e-12, rtol=0)
    with pytest.raises(ValueError):
        legendre_P(3, 1.0001)


def test_legendre_against_scipy():
    x = np.linspace(-1, 1, 101)
    for l in (3, 17, 200):
        assert np.allclose(legendre_P(l, x), special.eval_legendre(l, x), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 3000), st.floats(-1, 1))
def test_legendre_bounded(l, x):
    assert abs(legendre_P(l, x)) <= 1 + 1e-12


def test_harmonic_examples():
    assert zonal_value(0, 1.234) == pytest.approx(math.sqrt(1 / (4 * math.pi)))
    assert zonal_value(40, 0.0) == pytest.approx(2.53885, abs=1e-5)
    assert highest_weight_value(0, 0.7) == pytest.approx(math.sqrt(1 / (4 * math.pi)))
    assert highest_weight_const(1) == pytest.approx(math.sqrt(3 / (8 * math.pi)), rel=1e-12)
    assert highest_weight_const(1) == pytest.approx(0.34549, abs=1e-5)
    for l in (0, 1, 5, 64, 1000):
        assert highest_weight_const(l) == pytest.approx(highest_weight_wallis(l), rel=1e-10)


def test_zonal_l2_normalization():
    for l in list(range(0, 33)) + [100, 257, 512, 1024]:
        assert zonal_l2_norm(l) == pytest.approx(1.0, abs=1e-8)


def test_constant_norm(lebesgue_base):
    arc = ArcMeasure(lebesgue_base)
    c = math.sqrt(1 / (4 * math.pi))
    for p in (1, 2, 8, math.inf):
        assert restriction_norm("zonal", 0, arc, p) / c == pytest.approx(1.0, rel=1e-12)


def test_lebesgue_pole_value(lebesgue_base):
    arc = ArcMeasure(lebesgue_base)
    for l in (16, 100):
        assert restriction_norm("zonal", l, arc, math.inf) == pytest.approx(math.sqrt((2 * l + 1) / (4 * math.pi)))


def test_zonal_lebesgue_slope(lebesgue_base):
    fit = fit_restriction_exponent("zonal", ArcMeasure(lebesgue_base), 8, degree_grid(16, 512), 0.375)
    assert fit.slope == pytest.approx(0.375, abs=0.1)


def test_highest_weight_equator_slope(lebesgue_base):
    arc = ArcMeasure(lebesgue_base, placement="equator")
    for p in (2, 8):
        fit = fit_restriction_exponent("highest_weight", arc, p, degree_grid(16, 2048), 0.25, 0.05)
        assert fit.passed


def test_zonal_cantor_arc_slope():
    s = build_schedule("dim-epsilon", 4, 0.5, 1, 6)
    t = grow_conditioned(GrowthConfig(s, 0, pin_origin=True))
    arc = ArcMeasure(stage_measure(t, 6))
    assert arc.arc_param.min() == 0.0
    fit = fit_restriction_exponent("zonal", arc, 8, degree_grid(16, 512), 0.4375)
    assert fit.slope == pytest.approx(0.4375, abs=0.1)
    assert float(kappa(2, F(1, 2), 8)) - 0.1 <= fit.slope <= float(vartheta(2, F(1, 2), 8)) + 0.1


def test_resolution_gate():
    base = stage_measure(full_tree(full_schedule(2, 1, 6)), 6)
    with pytest.raises(ResolutionError):
        fit_restriction_exponent("zonal", ArcMeasure(base), 8, degree_grid(16, 512), 0.375)
    with pytest.raises(ValueError):
        ArcMeasure(base, length=4.0)


def test_exponent_examples():
    assert sogge_delta(2, 6) == F(1, 6)
    row = exponent_table(2, 1, 0, 4)
    assert row.p0 == 4 and row.theta == F(1, 4)
    assert row.branches["theta"] == "kink"
    row = exponent_table(2, 1, 0.5, 8)
    assert row.theta == F(7, 16) and row.kappa == F(7, 16) and row.p_star == 2
    inf = exponent_table(2, 1, 0.5, "inf")
    assert inf.sogge == F(1, 2) and inf.theta == F(1, 2)
    with pytest.raises(ValueError):
        exponent_table(2, 1, 0.5, 1.5)


def test_bgt_branches():
    # d = n - 1 with n = 3: kink at p = 2n/(n-1) = 3
    assert bgt_delta(3, 2, 3) == F(1, 2) - F(1, 6)
    assert bgt_delta(3, 2, 3) == 1 - F(2, 3)
    assert bgt_delta(3, 3, 8) == sogge_delta(3, 8)
    assert bgt_delta(4, 2, 2) == F(3, 2) - 1


@settings(max_examples=100)
@given(st.integers(2, 6), st.integers(0, 99), st.integers(0, 400))
def test_theta_equals_kappa(n, eps_pct, dp):
    eps = F(eps_pct, 100)
    for d in range(1, n + 1):
        a = d * (1 - eps)
        p0 = 4 * a / (n - 1)
        p = max(F(2), p0) + F(dp, 8)
        assert theta(n, d, eps, p) == kappa(n, a, p)


def test_exponents_continuous_at_kinks():
    h = F(1, 10**6)
    for n in range(2, 7):
        for thr in (F(2 * (n + 1), n - 1), F(2 * n, n - 1)):
            lo, hi = 1 / thr - h, 1 / thr + h
            # both branches have slope at most n in 1/p
            assert abs(sogge_delta(n, 1 / lo) - sogge_delta(n, 1 / hi)) <= 2 * n * h
            assert abs(bgt_delta(n, n - 1, 1 / lo) - bgt_delta(n, n - 1, 1 / hi)) <= 2 * n * h


def test_table_csv():
    rows = [exponent_table(2, 1, 0.5, p) for p in (2, 4, 6, 8, "inf")]
    lines = table_csv(rows).splitlines()
    assert tuple(lines[0].split(",")) == TABLE_COLUMNS
    assert lines[-1].split(",")[3] == "inf"
    assert len(lines) == 6
