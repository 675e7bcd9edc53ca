import math
from fractions import Fraction

import numpy as np
import pytest

from uipq import limits
from uipq.limits import (
    TARGETS,
    EstimateReport,
    ProfileMeasure,
    TargetCurve,
    bucket,
    consistency_checks,
    expected_mass,
    expected_profile,
    label_mass_samples,
    mc_ball_volume,
    mc_mean_profile,
    profile_from_decomposition,
    profile_from_map,
    rescale,
    spine_moment_check,
    spine_tail_means,
    subtree_label_means,
    trend,
)
from uipq.sampling import HARMONIC_QUARTIC, RngStream, TruncationPolicy, sample_rho_hat, sample_uiwt, spine_tables
from uipq.schaeffer import build_truncated
from uipq.trees import LabeledTree, TruncationCertificate, spine_assemble

# exact expectations of lambda([0, R]), frozen from the sparse solve with the
# default resolution
EXACT_MASS = {1: 6.749353926910634, 2: 23.83638199069955, 3: 61.23772461130205}


# ---------------------------------------------------------------- targets

def test_target_constants():
    t = TARGETS
    assert t.mean_profile == Fraction(32, 21)
    assert t.ball_mean == Fraction(24, 7)
    assert t.ball_mean == Fraction(9, 4) * t.mean_profile
    assert t.profile_mean(1) == pytest.approx(32 / 21)
    assert t.profile_mean(0.5) == pytest.approx(2 / 21)
    assert t.spine_second_moment(2) == 18


def test_target_curve_checks_consistency():
    with pytest.raises(ValueError):
        TargetCurve(ball_mean=Fraction(3))


# ---------------------------------------------------------------- profiles

def test_profile_measure_basics():
    p = ProfileMeasure([1, 2, 5])
    assert p.radius == 2 and p.mass(0) == 1 and p.mass(2) == 8
    with pytest.raises(ValueError):
        p.mass(3)
    with pytest.raises(ValueError):
        ProfileMeasure([0, 1])
    with pytest.raises(ValueError):
        ProfileMeasure([1, -1])


def test_bucket_and_rescale():
    assert bucket(6, 1) == 2
    assert bucket(6, 0.5) == 1
    assert bucket(24, 1) == 4
    rp = rescale(ProfileMeasure([1, 2, 5]), 6)
    assert rp(1) == pytest.approx(8 / 36)
    assert rp(0.4) == pytest.approx(1 / 36)
    with pytest.raises(ValueError):
        rp(2)


def test_profile_of_trivial_decomposition():
    cert = TruncationCertificate(target_radius=2, x_stop=2, window=1, height=1, epsilon=0.0)
    sd = spine_assemble([1, 2], [LabeledTree.single(1), LabeledTree.single(2)],
                        [LabeledTree.single(1), LabeledTree.single(2)], cert)
    assert profile_from_decomposition(sd, 2).counts.tolist() == [1, 1, 1]
    with pytest.raises(ValueError):
        profile_from_decomposition(sd, 3)


def test_tree_and_map_profiles_agree():
    for s in range(20):
        sd = sample_uiwt(TruncationPolicy(4, x_stop=12, window=6), RngStream(3, s))
        q = build_truncated(sd, 3)
        assert profile_from_decomposition(sd, 3) == profile_from_map(q, 3)


def test_report_fields():
    rep = EstimateReport("x", 10, 1.0, 100, 1.2, 0.1, 1.0)
    assert rep.zscore == pytest.approx(2.0)
    assert rep.ratio == pytest.approx(1.2)
    assert set(rep.row()) == {"n", "r_or_t", "M", "estimate", "stderr", "target", "zscore"}
    assert EstimateReport("x", 1, 1, 1, 1.0, 0.0, 1.0).zscore == 0.0
    t = trend([EstimateReport("x", n, 1, 1, e, 0.1, 1.0) for n, e in ((2, 0.5), (1, 0.2), (4, 0.9))])
    assert t["n"] == [1, 2, 4] and t["improving"]


# ---------------------------------------------------------------- exact expectations

def neumann_label_means(R, L, terms=200000):
    """E #labels <= R under rho-hat_l by summing offspring generations."""
    l = np.arange(1, L + 1, dtype=np.float64)
    p = l * (l + 3) / ((l + 1) * (l + 2))
    diag, off = p * p / 3, p[:-1] * p[1:] / 3
    v = (l <= R).astype(float)
    total = np.zeros(L)
    for _ in range(terms):
        total += v
        w = diag * v
        w[:-1] += off * v[1:]
        w[1:] += off * v[:-1]
        v = w
        if v.max() < 1e-15:
            break
    return total


def test_subtree_means_two_routes():
    a = subtree_label_means(3, 300)[1:]
    b = neumann_label_means(3, 300)
    assert np.allclose(a[:60], b[:60], rtol=1e-7)


def test_subtree_means_against_sampling():
    rng = RngStream(12)
    vals = []
    for _ in range(20000):
        t = sample_rho_hat(2, rng)
        vals.append(int((t.labels <= 3).sum()))
    vals = np.asarray(vals, float)
    exact = subtree_label_means(3, 2000)[2]
    se = vals.std() / math.sqrt(len(vals))
    assert abs(vals.mean() - exact) < 4 * se


def test_expected_mass_frozen_and_resolution():
    for R, v in EXACT_MASS.items():
        assert expected_mass(R) == pytest.approx(v, rel=1e-12)
    # doubling the label range moves the value by less than 0.1%
    a, b = expected_mass(3, L=20000), expected_mass(3, L=40000)
    assert abs(a - b) / b < 1e-3


def test_expected_profile_shape():
    p = expected_profile(40)
    assert p[0] == 1
    assert np.all(np.diff(p[1:]) > 0)
    assert np.cumsum(p)[3] == pytest.approx(EXACT_MASS[3], rel=1e-3)
    # cubic growth
    assert 0.4 < p[40] / 40**3 < 0.6


def test_spine_tail_means_solve_their_equation():
    c = np.zeros((1, 201))
    c[0, 1:6] = 1.0
    h = spine_tail_means(c, HARMONIC_QUARTIC)[0]
    c = c[0]
    p_down, p_stay = spine_tables(202, HARMONIC_QUARTIC)
    for y in range(2, 50):
        step = p_down[y] * (c[y - 1] + h[y - 1]) + p_stay[y] * (c[y] + h[y])
        step += (1 - p_down[y] - p_stay[y]) * (c[y + 1] + h[y + 1])
        assert h[y] == pytest.approx(step, rel=1e-9, abs=1e-12)


# ---------------------------------------------------------------- Monte Carlo against the exact values

def test_conditional_estimator_matches_exact():
    v, _ = label_mass_samples([1, 2], 6000, seed=5)
    for j, R in enumerate((1, 2)):
        se = v[:, j].std(ddof=1) / math.sqrt(len(v))
        assert abs(v[:, j].mean() - EXACT_MASS[R]) < 4 * se


def test_full_estimator_matches_exact():
    v, _ = label_mass_samples([1], 600, seed=6, policy=TruncationPolicy(1, x_stop=16, window=16), method="full")
    se = v[:, 0].std(ddof=1) / math.sqrt(len(v))
    assert abs(v[:, 0].mean() - EXACT_MASS[1]) < 4 * se


def test_tail_correction_removes_truncation_dependence():
    short = TruncationPolicy(2, x_stop=12, window=12)
    a, _ = label_mass_samples([2], 3000, 8, short)
    b, _ = label_mass_samples([2], 3000, 8, short.doubled())
    assert abs(a.mean() - b.mean()) / b.mean() < 0.01
    a, _ = label_mass_samples([2], 3000, 8, short, tail=False)
    b, _ = label_mass_samples([2], 3000, 8, short.doubled(), tail=False)
    assert b.mean() > a.mean()


def test_estimates_are_reproducible():
    a = mc_mean_profile(24, 500, [0.5, 1.0], seed=1)
    b = mc_mean_profile(24, 500, [0.5, 1.0], seed=1)
    assert [r.estimate for r in a] == [r.estimate for r in b]
    c = mc_mean_profile(24, 500, [0.5, 1.0], seed=2)
    for x, y in zip(a, c):
        assert abs(x.estimate - y.estimate) < 4 * math.hypot(x.stderr, y.stderr)
    assert a[1].extra["bucket"] == 4


def test_workers_do_not_change_results():
    a, _ = label_mass_samples([2], 200, 4, workers=1)
    b, _ = label_mass_samples([2], 200, 4, workers=2)
    assert np.array_equal(a, b)


def test_ball_volume_report():
    (rep,) = mc_ball_volume([2], 500, seed=3)
    assert rep.target == pytest.approx(24 / 7)
    assert rep.estimate == pytest.approx(EXACT_MASS[2] / 16, rel=0.1)


def test_failures_abort():
    with pytest.raises(limits.EstimationError):
        limits._checked(np.array([[1.0], [np.nan]]))


# ---------------------------------------------------------------- spine and bundled checks

def exact_spine_second_moment(n):
    """E X_n^2 by pushing the law of the spine forward n steps."""
    p_down, p_stay = spine_tables(n + 3, HARMONIC_QUARTIC)
    pd, ps = p_down[: n + 3], p_stay[: n + 3]
    pu = 1 - pd - ps
    law = np.zeros(n + 3)
    law[1] = 1.0
    for _ in range(n):
        new = law * ps
        new[:-1] += (law * pd)[1:]
        new[1:] += (law * pu)[:-1]
        law = new
    return float((law * np.arange(n + 3) ** 2).sum())


def test_spine_moment_at_zero_and_scaling():
    reps = spine_moment_check(200, 2000, [0.0, 1.0], seed=0)
    assert reps[0].estimate == pytest.approx(3 / 400)
    assert reps[1].target == 9
    exact = 3 / 400 * exact_spine_second_moment(200)
    assert abs(reps[1].estimate - exact) < 4 * reps[1].stderr
    assert 0 <= reps[1].extra["ks_pvalue"] <= 1
    # the finite-n moment climbs toward the limit
    assert exact < 3 / 800 * exact_spine_second_moment(400) < 9


def test_consistency_checks_report():
    out = consistency_checks(M=4000, seed=1, asymptotic_n=200)
    assert [r["exact"] for r in out["size_law"][:3]] == ["1/2", "1/8", "1/16"]
    assert out["well_labeled_counts"] == [1, 2, 9, 54, 378, 2916]
    assert [r["l"] for r in out["acceptance"]] == [1, 2, 5]
    assert all(abs(r["zscore"]) < 5 for r in out["acceptance"] + out["size_law"])
    assert out["hitting_limit"][1]["float"] == pytest.approx(2, rel=1e-5)
