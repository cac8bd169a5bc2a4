import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frostman.cantor_core import (
    CubeIndex, ScheduleError, TreeFormatError, anchor, anchor_fraction, build_schedule,
    custom_schedule, decode, deserialize_tree, empty_tree, encode, full_schedule, full_tree,
    refine_stage, serialize_tree, stage_measure, tree_from_coordinates,
)
from frostman.random_cantor import grow


def test_dim_epsilon_schedule_values():
    s = build_schedule("dim-epsilon", 4, 0.5, 1, 3)
    assert s.Nk == (4, 16, 64)
    assert s.log2_delta[-1] == -12
    assert np.allclose(s.p, [0.5, 0.25, 0.125], rtol=0, atol=1e-15)
    assert s.log2_R[-1] == pytest.approx(6.0, abs=1e-12)


def test_p_gate_rejects_large_selection_probability():
    with pytest.raises(ScheduleError, match="> 1/2"):
        build_schedule("dim-epsilon", 2, 0.5, 1, 3)


def test_dim1_schedule_values():
    s = build_schedule("dim1", 8, 1 / 3, 1, 2)
    assert np.allclose(s.p, 0.5, atol=1e-12)
    assert s.log2_delta[-1] == pytest.approx(-9)


def test_schedule_closed_forms():
    for preset, shape in (("dim-epsilon", 0.5), ("dim1", 1 / 3)):
        s = build_schedule(preset, 8 if preset == "dim1" else 4, shape, 1, 6)
        N = s.N
        for k in range(1, 7):
            assert s.Nk[k - 1] == N**k
            assert s.log2_delta[k - 1] == pytest.approx(-(k * (k + 1) / 2) * math.log2(N))
            # R_k = prod N_j^{d(1 - eps_j)}
            expect = sum((1 - s.eps[j]) * math.log2(s.Nk[j]) for j in range(k))
            assert s.log2_R[k - 1] == pytest.approx(expect)
    s = build_schedule("dim1", 8, 1 / 3, 1, 6)
    # closed form N^{dk(k+1)/2 - d gamma k}
    for k in range(1, 7):
        assert s.log2_R[k - 1] == pytest.approx(3 * (k * (k + 1) / 2 - k / 3))


def test_depth_beyond_64_bits_rejected():
    with pytest.raises(ScheduleError, match="64-bit"):
        build_schedule("dim-epsilon", 4, 0.5, 1, 8)


def test_diagnostics_partial_sums():
    s = build_schedule("dim-epsilon", 4, 0.5, 1, 5)
    expect = sum((1 - 2.0**-k) ** (4**k) for k in range(1, 6))
    assert s.diagnostics["extinction_partial_sum"] == pytest.approx(expect, rel=1e-12)
    assert s.diagnostics["extinction_partial_sum"] < 1


def test_anchor_examples():
    s = custom_schedule([2, 4], d=1)
    assert anchor(CubeIndex.from_digits([2, 3]), s)[0] == 0.75
    assert anchor_fraction(CubeIndex.from_digits([2, 3]), s) == (Fraction(3, 4),)
    s2 = custom_schedule([3], d=2)
    idx = CubeIndex.from_digits([(2, 3)])
    assert np.allclose(anchor(idx, s2), [1 / 3, 2 / 3])
    s3 = build_schedule("dim-epsilon", 4, 0.5, 2, 3)
    ones = CubeIndex.from_digits([(1, 1)] * 3)
    assert np.all(anchor(ones, s3) == 0)


@given(st.lists(st.integers(1, 4), min_size=1, max_size=3), st.lists(st.integers(1, 4), min_size=1, max_size=3))
def test_encode_roundtrip_and_monotone(a, b):
    s = custom_schedule([4, 4, 4], d=1)
    ia, ib = CubeIndex.from_digits(a), CubeIndex.from_digits(b)
    assert decode(encode(ia, s), ia.stage, s) == ia
    if len(a) == len(b):
        # lexicographic order of digits matches anchor order
        assert (a < b) == (anchor(ia, s)[0] < anchor(ib, s)[0])
        assert anchor(ia, s)[0] <= 1 - s.delta(len(a))


def test_figure_two_step_one_and_measure():
    s = custom_schedule([4, 7], d=1)
    t = refine_stage(empty_tree(s), 1, np.array([[1, 0, 0, 1]]))
    assert t.P == (2,)
    assert t.cubes(1)[:, 0].tolist() == [0, 3]
    mu = stage_measure(t, 1)
    assert np.allclose(mu.anchors[:, 0], [0, 0.75])
    assert np.allclose(mu.weights, 0.5)


def test_refine_with_mapping_ignores_dead_parents():
    s = custom_schedule([4, 7], d=1)
    t = refine_stage(empty_tree(s), 1, {CubeIndex.from_digits([1]): 1, CubeIndex.from_digits([4]): 1})
    sel = {CubeIndex.from_digits([1, i]): 1 for i in (1, 3, 4, 7)}
    sel[CubeIndex.from_digits([2, 1])] = 1  # parent 2 is dead
    t2 = refine_stage(t, 2, sel)
    assert t2.P == (2, 4)
    assert t2.cubes(2)[:, 0].tolist() == [0, 2, 3, 6]


def test_refine_all_and_none():
    s = build_schedule("dim-epsilon", 4, 0.5, 1, 3)
    t = full_tree(s, 2)
    assert t.P == (4, 64)
    t0 = refine_stage(t, 3, np.zeros((64, 64), dtype=bool))
    assert t0.P[-1] == 0 and t0.extinct
    with pytest.raises(ZeroDivisionError):
        stage_measure(t0, 3)


def test_refine_wrong_stage_rejected():
    s = build_schedule("dim-epsilon", 4, 0.5, 1, 3)
    with pytest.raises(ScheduleError):
        refine_stage(empty_tree(s), 2, np.ones((1, 16)))


def test_stage_measure_examples():
    s = full_schedule(2, 1, 3)
    mu = stage_measure(full_tree(s), 1)
    assert np.allclose(mu.anchors[:, 0], [0, 0.5]) and np.allclose(mu.weights, 0.5)
    single = tree_from_coordinates(s, [[[0]]])
    mu1 = stage_measure(single, 1)
    assert mu1.size == 1 and mu1.weights[0] == 1.0


def test_full_tree_is_lebesgue_on_dyadic_boxes():
    s = full_schedule(2, 2, 4)
    mu = stage_measure(full_tree(s), 4)
    a = mu.anchors
    box = (a[:, 0] >= 0.25) & (a[:, 0] < 0.75) & (a[:, 1] >= 0.5)
    assert mu.weights[box].sum() == pytest.approx(0.25, abs=1e-10)
    assert math.fsum(mu.weights) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 2))
def test_tree_invariants_random(seed, d):
    s = build_schedule("dim-epsilon", 4, 0.5, d, 3 if d == 2 else 4)
    t = grow(s, seed)
    for k in range(2, t.depth + 1):
        if t.P[k - 1] == 0:
            break
        par = t.cubes(k) // s.Nk[k - 1]
        prev = {tuple(r) for r in t.cubes(k - 1).tolist()}
        assert all(tuple(r) in prev for r in par.tolist())
    for k in range(1, t.depth + 1):
        if t.P[k - 1]:
            vol = t.log2_volume(k)
            direct = math.log2(sum([s.delta(k) ** d] * t.P[k - 1]))
            assert vol == pytest.approx(direct, rel=1e-10)
            assert math.fsum(stage_measure(t, k).weights) == pytest.approx(1, abs=1e-12)


def test_serialize_roundtrip_many():
    s = build_schedule("dim-epsilon", 4, 0.5, 1, 4)
    for seed in range(100):
        t = grow(s, seed, pin_origin=seed % 2 == 0)
        if t.extinct:
            continue
        back = deserialize_tree(serialize_tree(t))
        assert back.pinned_origin == t.pinned_origin
        assert back.schedule == t.schedule
        assert all(np.array_equal(a, b) for a, b in zip(back.stages, t.stages))
        assert serialize_tree(back) == serialize_tree(t)


def test_serialize_errors():
    s = build_schedule("dim-epsilon", 4, 0.5, 1, 3)
    doc = json.loads(serialize_tree(full_tree(s, 2)))
    doc["stages"] = []
    with pytest.raises(TreeFormatError, match="no stages"):
        deserialize_tree(json.dumps(doc))
    doc["stages"] = [[["0"]], [["0"], ["20"]]]
    with pytest.raises(TreeFormatError, match="orphan cube at stage 2"):
        deserialize_tree(json.dumps(doc))
    with pytest.raises(TreeFormatError, match="offset"):
        deserialize_tree(b'{"schedule": [')


def test_custom_schedule_roundtrip():
    s = custom_schedule([4, 7], d=1)
    t = full_tree(s)
    back = deserialize_tree(serialize_tree(t))
    assert back.schedule.Nk == (4, 7) and back.P == (4, 28)
