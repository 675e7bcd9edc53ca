import math
from fractions import Fraction
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uipq import _numba
from uipq.sampling import (
    HARMONIC_QUARTIC,
    NOMINAL_QUARTIC,
    RngStream,
    SizeCapExceeded,
    TruncationPolicy,
    catalan,
    count_well_labeled,
    enumerate_well_labeled,
    estimate_size_law,
    estimate_size_probability,
    kernel_row,
    prob_hat_min_le,
    prob_min_at,
    prob_min_le,
    prob_min_positive,
    sample_rho,
    sample_rho_hat,
    sample_spine,
    sample_truncated_spine,
    sample_uiwt,
    size_probability,
    spine_tables,
    w,
)
from uipq.trees import LabeledTree, dumps_tree, encode_contour, validate


# ---------------------------------------------------------------- streams

def test_stream_determinism():
    a = RngStream(42, 3).random(5)
    b = RngStream(42, 3).random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, RngStream(42, 4).random(5))
    assert not np.array_equal(a, RngStream(42, 3, 1).random(5))
    assert not np.array_equal(a, RngStream(43, 3).random(5))


def test_stream_counter():
    r = RngStream(1)
    assert r.counter == 0
    r.random(3)
    assert r.counter == 3
    r.random(6)
    assert r.counter == 9


def test_stream_children():
    r = RngStream(5, 2)
    assert r.child(7) == RngStream(5, 2, 7)
    assert r.task(9) == RngStream(5, 9, 0)
    with pytest.raises(ValueError):
        RngStream(1, 1 << 33)


# ---------------------------------------------------------------- exact probabilities

def test_prob_min_positive_examples():
    assert prob_min_positive(1) == Fraction(2, 3)
    assert prob_min_positive(2) == Fraction(5, 6)
    assert prob_min_positive(5) == Fraction(20, 21)
    assert prob_min_positive(100) == Fraction(10300, 10302)
    with pytest.raises(ValueError):
        prob_min_positive(0)


def test_prob_min_positive_is_half_w_and_increasing():
    vals = [prob_min_positive(l) for l in range(1, 200)]
    assert all(a < b < 1 for a, b in zip(vals, vals[1:]))
    assert all(v == w(l) / 2 for l, v in zip(range(1, 200), vals))


def test_prob_min_at_examples():
    assert prob_min_at(1, 0) == Fraction(1, 6)
    assert prob_min_at(5, 2) == Fraction(1, 30)
    assert prob_min_positive(1) + prob_min_at(1, 0) == prob_min_positive(2)
    with pytest.raises(ValueError):
        prob_min_at(2, 2)


@pytest.mark.parametrize("l,r", [(1, 0), (3, 1), (7, 2), (12, 11)])
def test_prob_min_le_sums_point_masses(l, r):
    # P(V_* <= r) summed over all levels r, r-1, ... down to -infinity:
    # a partial sum plus the telescoped tail 2 / ((m+1)(m+2))
    m0 = l - r
    K = 500
    partial = sum(Fraction(4, (m + 1) * (m + 2) * (m + 3)) for m in range(m0, m0 + K))
    tail = Fraction(2, (m0 + K + 1) * (m0 + K + 2))
    assert partial + tail == prob_min_le(l, r)
    assert prob_min_le(l, l) == 1


def test_prob_hat_min_le_example():
    assert prob_hat_min_le(10, 1) == 1 - Fraction(108, 110) / Fraction(130, 132)
    assert prob_hat_min_le(3, 3) == 1
    assert prob_hat_min_le(3, 0) == 0


def test_size_probability_matches_enumeration():
    # independent oracle: all plane trees with n edges times all 3^n label
    # increments, each labeled tree weighing 1/2 * 12^-n
    def shapes(n):
        count = 0
        for word in product("UD", repeat=2 * n):
            h = 0
            for s in word:
                h += 1 if s == "U" else -1
                if h < 0:
                    break
            else:
                count += h == 0
        return count

    for n in range(5):
        mass = shapes(n) * 3**n * Fraction(1, 2) / Fraction(12) ** n
        assert mass == size_probability(n)
    assert [size_probability(n) for n in range(4)] == [Fraction(1, 2), Fraction(1, 8), Fraction(1, 16), Fraction(5, 128)]


def test_hitting_constant_limit():
    assert 1000**2 * (1 - w(1000) / 2) == Fraction(2 * 10**6, 1001 * 1002)
    assert abs(float(10**6 * 10**6 * (1 - w(10**6) / 2)) - 2) < 1e-5


# ---------------------------------------------------------------- kernel

def nominal_d(l):
    wl = Fraction(2 * l * (l + 3), (l + 1) * (l + 2))
    return 2 * wl / 560 * (4 * l**4 + 30 * l**3 + 59 * l**2 + 42 * l + 4)


def test_kernel_row_examples():
    row = kernel_row(1)
    assert row.raw_stay == Fraction(4, 27)
    assert row.raw_down == 0
    assert row.raw_up == Fraction(4, 27) * nominal_d(2) / nominal_d(1)


def test_nominal_raw_row_sums():
    assert kernel_row(1).raw_row_sum == Fraction(1232, 1251)
    assert kernel_row(2).raw_row_sum == Fraction(22315, 22608)
    for l in range(1, 101):
        row = kernel_row(l)
        direct = row.raw_stay * (1 + (nominal_d(l - 1) if l > 1 else 0) / nominal_d(l) + nominal_d(l + 1) / nominal_d(l))
        assert row.raw_row_sum == direct
        assert sum(row.normalized()) == 1
        assert min(row.normalized()) >= 0
    assert abs(float(kernel_row(1000).raw_row_sum) - 1) < 1e-3


def test_harmonic_rows_are_stochastic():
    for l in range(1, 301):
        assert kernel_row(l, HARMONIC_QUARTIC).raw_row_sum == 1


@pytest.mark.parametrize("quartic", [NOMINAL_QUARTIC, HARMONIC_QUARTIC])
def test_float_tables_match_exact_rows(quartic):
    p_down, p_stay = spine_tables(400, quartic)
    for l in (1, 2, 3, 10, 57, 399):
        row = kernel_row(l, quartic)
        assert p_down[l] == pytest.approx(float(row.down), rel=1e-13, abs=1e-16)
        assert p_stay[l] == pytest.approx(float(row.stay), rel=1e-13)


# ---------------------------------------------------------------- spine

def test_spine_first_step_and_support():
    for s in range(50):
        X = sample_spine(RngStream(s), lambda i, h: i >= 200)
        assert X[0] == 1 and X[1] in (1, 2)
        assert X.min() >= 1
        assert np.abs(np.diff(X)).max() <= 1
        assert len(X) == 201


def test_python_and_compiled_spines_agree():
    policy = TruncationPolicy(2, x_stop=12, window=5)
    for s in range(20):
        fast = sample_truncated_spine(policy, RngStream(s))

        def stop(i, hist):
            return len(hist) >= 5 and min(hist[-5:]) >= 12

        slow = sample_spine(RngStream(s), stop)
        assert np.array_equal(fast, slow)


# ---------------------------------------------------------------- tree samplers

def test_sample_rho_small_tree_frequencies():
    gen = RngStream(11).generator
    M = 40_000
    single = edge_up = 0
    for _ in range(M):
        try:
            t = sample_rho(3, gen, 3)
        except SizeCapExceeded:
            continue
        if t.size == 0:
            single += 1
        elif t.size == 1 and t.labels[1] == 4:
            edge_up += 1
    for count, p in ((single, 1 / 2), (edge_up, 1 / 24)):
        se = math.sqrt(p * (1 - p) / M)
        assert abs(count / M - p) < 4 * se


def test_sample_rho_overflow():
    gen = RngStream(3).generator
    with pytest.raises(SizeCapExceeded):
        for _ in range(200):
            sample_rho(1, gen, 2)
    with pytest.raises(ValueError):
        sample_rho(1, gen, 0)


def test_sample_rho_is_valid_labeled_tree():
    gen = RngStream(9).generator
    for _ in range(300):
        t = sample_rho(0, gen, 10**5)
        assert t.root_label == 0
        assert validate(t).ok


def test_sample_rho_hat_positive():
    gen = RngStream(8).generator
    for l in (1, 2, 7):
        for _ in range(300):
            t = sample_rho_hat(l, gen, 10**6)
            assert t.root_label == l and t.labels.min() >= 1
            assert validate(t).ok


def test_rho_hat_tail_dominated_by_twice_rho():
    M, m = 20_000, 5
    gen = RngStream(21).generator
    big_hat = sum(sample_rho_hat(1, gen, 10**6).size >= m for _ in range(M)) / M
    sizes = _numba.size_histogram(RngStream(22).generator, M, m + 1) - 1
    big = (sizes >= m).mean()
    se = math.sqrt(big_hat * (1 - big_hat) / M + 4 * big * (1 - big) / M)
    assert big_hat <= 2 * big + 4 * se


def test_size_law_estimates():
    M = 200_000
    emp = estimate_size_law(4, M, RngStream(5))
    for n in range(5):
        p = float(size_probability(n))
        assert abs(emp[n] - p) < 4 * math.sqrt(p * (1 - p) / M)
    est, se = estimate_size_probability(10, 200_000, RngStream(6))
    assert abs(est - float(size_probability(10))) < 4 * se


# ---------------------------------------------------------------- infinite tree

def test_policy_defaults_and_invariants():
    p = TruncationPolicy(1)
    assert (p.x_stop, p.window) == (33, 33)
    p = TruncationPolicy(10)
    assert (p.x_stop, p.window) == (80, 80)
    assert p.doubled().x_stop == 160 and p.doubled().window == 160
    with pytest.raises(ValueError):
        TruncationPolicy(0)
    with pytest.raises(ValueError):
        TruncationPolicy(5, x_stop=5)
    with pytest.raises(ValueError):
        TruncationPolicy(5, window=0)


def test_uiwt_structure_and_certificate():
    policy = TruncationPolicy(1, x_stop=6, window=4)
    sd = sample_uiwt(policy, RngStream(4))
    X = sd.spine_labels
    assert X[0] == 1 and X[-4:].min() >= 6
    for x, l, r in zip(X, sd.left, sd.right):
        assert l.root_label == x and r.root_label == x
        assert l.labels.min() >= 1 and r.labels.min() >= 1
    cert = sd.truncation
    assert cert.height == sd.height
    assert cert.dip_probabilities == tuple(prob_hat_min_le(int(x), 1) for x in X[-4:])
    assert cert.residual_bound == pytest.approx(2 * sum(float(p) for p in cert.dip_probabilities))


def test_uiwt_determinism_and_extension():
    policy = TruncationPolicy(2)
    a = sample_uiwt(policy, RngStream(17, 3))
    assert a == sample_uiwt(policy, RngStream(17, 3))
    assert a != sample_uiwt(policy, RngStream(17, 4))
    b = sample_uiwt(policy.doubled(), RngStream(17, 3))
    # the stricter policy continues the same sample
    H = a.height
    assert np.array_equal(b.spine_labels[: H + 1], a.spine_labels)
    assert b.left[:H + 1] == a.left and b.right[:H + 1] == a.right


# ---------------------------------------------------------------- enumeration

def test_enumeration_counts():
    counts = [len(enumerate_well_labeled(n)) for n in range(6)]
    assert counts == [1, 2, 9, 54, 378, 2916]
    assert counts == [count_well_labeled(n) for n in range(6)]
    with pytest.raises(ValueError):
        enumerate_well_labeled(6)


def test_enumeration_n1():
    assert enumerate_well_labeled(1) == [LabeledTree.from_nested((1, (1,))), LabeledTree.from_nested((1, (2,)))]


def test_enumeration_is_sorted_distinct_and_valid():
    for n in range(5):
        trees = enumerate_well_labeled(n)
        assert len(set(trees)) == len(trees)
        assert all(validate(t, "well_labeled").ok and t.size == n for t in trees)
        keys = [dumps_tree(t).split("\n")[1:3] for t in trees]
        steps = [k[0].replace(" ", "") for k in keys]
        deltas = [tuple(np.diff(encode_contour(t).V).tolist()) for t in trees]
        assert list(zip(steps, deltas)) == sorted(zip(steps, deltas))
        assert trees == enumerate_well_labeled(n)


def test_enumeration_matches_brute_force():
    # every labeled tree with n <= 3 edges from the shape enumeration, kept if well labeled
    from uipq.trees import ContourPair, decode_contour

    for n in range(4):
        found = set()
        for steps in product((1, -1), repeat=2 * n):
            C = np.r_[0, np.cumsum(steps)]
            if C.min() < 0 or C[-1] != 0:
                continue
            for dv in product((-1, 0, 1), repeat=2 * n):
                V = np.r_[1, 1 + np.cumsum(dv)]
                try:
                    t = decode_contour(ContourPair(C, V))
                except ValueError:
                    continue
                if t.labels.min() >= 1:
                    found.add(t)
        assert found == set(enumerate_well_labeled(n))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 60), st.integers(0, 59))
def test_dip_probability_bounds(x, r):
    p = prob_hat_min_le(x, r)
    assert 0 <= p <= 1
    if r < x:
        assert p <= prob_hat_min_le(x, r + 1)
