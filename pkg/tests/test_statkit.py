import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps
from sklearn.metrics import cohen_kappa_score

from provkg.statkit import (TestResult, bh_correct, bootstrap_ci, cohens_d, cohens_d_samples,
                            icc_2_1, krippendorff_alpha, mann_whitney_u, spearman_rho,
                            weighted_kappa_quadratic, wilson_ci)


# --------------------------------------------------------------------------- Mann-Whitney

def brute_mwu_p(a, b):
    """Exact two-sided p by enumerating every relabelling and counting pairwise wins."""
    pooled = list(a) + list(b)
    na = len(a)

    def u(x, y):
        return sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in x for q in y)

    mu = len(a) * len(b) / 2
    obs = abs(u(a, b) - mu)
    hits = total = 0
    for idx in itertools.combinations(range(len(pooled)), na):
        x = [pooled[i] for i in idx]
        y = [pooled[i] for i in range(len(pooled)) if i not in idx]
        total += 1
        hits += abs(u(x, y) - mu) >= obs - 1e-9
    return hits / total


small = st.lists(st.integers(1, 6), min_size=1, max_size=5)


@settings(max_examples=60, deadline=None)
@given(small, small)
def test_mwu_exact_matches_enumeration(a, b):
    res = mann_whitney_u(a, b)
    assert res.extra["method"] == "exact"
    assert res.p_value == pytest.approx(brute_mwu_p(a, b), abs=1e-12)
    assert res.statistic + res.extra["u_b"] == len(a) * len(b)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=2, max_size=8, unique=True),
       st.lists(st.floats(0, 100, allow_nan=False), min_size=2, max_size=8, unique=True))
def test_mwu_matches_scipy_exact_without_ties(a, b):
    if set(a) & set(b):
        return
    ref = sps.mannwhitneyu(a, b, alternative="two-sided", method="exact")
    res = mann_whitney_u(a, b)
    assert res.statistic == pytest.approx(ref.statistic)
    assert res.p_value == pytest.approx(ref.pvalue, abs=1e-9)


def test_mwu_normal_branch_matches_scipy():
    rng = np.random.default_rng(0)
    a, b = rng.integers(1, 6, 30), rng.integers(2, 7, 25)
    ref = sps.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
    res = mann_whitney_u(a, b)
    assert res.extra["method"] == "normal"
    assert res.p_value == pytest.approx(ref.pvalue, rel=1e-9)


# --------------------------------------------------------------------------- effect sizes

@pytest.mark.parametrize("a,b,target", [
    ((2.50, 0.55, 6), (3.80, 0.45, 5), 2.57),
    ((2.35, 0.70, 17), (4.00, 1.08, 18), 1.79),
    ((3.03, 0.88, 36), (3.69, 0.98, 36), 0.72),
])
def test_cohens_d_targets(a, b, target):
    assert abs(cohens_d(*a, *b) - target) <= 0.05


@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=20),
       st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=20))
def test_cohens_d_samples_oracle(a, b):
    na, nb = len(a), len(b)
    pooled = math.sqrt(((na - 1) * np.var(a, ddof=1) + (nb - 1) * np.var(b, ddof=1)) / (na + nb - 2))
    if pooled < 1e-6:
        return
    assert cohens_d_samples(a, b) == pytest.approx((np.mean(b) - np.mean(a)) / pooled, rel=1e-6, abs=1e-9)


def test_cohens_d_degenerate():
    assert cohens_d(1, 0, 3, 1, 0, 3) == 0.0
    with pytest.raises(ValueError):
        cohens_d(1, 0, 3, 2, 0, 3)
    with pytest.raises(ValueError):
        cohens_d(1, 1, 1, 2, 1, 3)


# --------------------------------------------------------------------------- intervals

@pytest.mark.parametrize("k,n,lo,hi", [(12, 15, 0.548, 0.930), (2, 15, 0.037, 0.379)])
def test_wilson_targets(k, n, lo, hi):
    got = wilson_ci(k, n)
    assert abs(got[0] - lo) <= 0.001 and abs(got[1] - hi) <= 0.001


@given(st.integers(1, 500).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))))
def test_wilson_contains_phat(kn):
    k, n = kn
    lo, hi = wilson_ci(k, n)
    assert 0 <= lo <= k / n <= hi <= 1


def test_bootstrap_deterministic_and_ordered():
    x = np.linspace(0, 1, 36)
    a = bootstrap_ci(x, seed=42)
    assert a == bootstrap_ci(x, seed=42)
    assert a != bootstrap_ci(x, seed=43)
    assert a[0] < x.mean() < a[1]
    med = bootstrap_ci(x, statistic=np.median, resamples=500)
    custom = bootstrap_ci(x, statistic=lambda r: float(np.median(r)), resamples=500)
    assert med == pytest.approx(custom)


# --------------------------------------------------------------------------- multiplicity

def test_bh_by_hand():
    p = [0.01, 0.04, 0.03, 0.20]
    # sorted: .01 .03 .04 .20 -> scaled .04 .06 .0533 .20 -> step-up min .04 .0533 .0533 .20
    assert bh_correct(p) == pytest.approx([0.04, 0.0533333, 0.0533333, 0.20], abs=1e-6)
    assert bh_correct([]) == []
    with pytest.raises(ValueError):
        bh_correct([0.5, 1.5])


@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=30))
def test_bh_properties(p):
    q = bh_correct(p)
    assert all(qi >= pi - 1e-12 and qi <= 1 for pi, qi in zip(p, q))
    order = np.argsort(p, kind="mergesort")
    qs = np.asarray(q)[order]
    assert np.all(np.diff(qs) >= -1e-12)


# --------------------------------------------------------------------------- agreement

GRID = [1 + 0.5 * i for i in range(9)]


@pytest.mark.filterwarnings("ignore:invalid value encountered")
@given(st.lists(st.tuples(st.sampled_from(GRID), st.sampled_from(GRID)), min_size=2, max_size=40))
def test_weighted_kappa_matches_sklearn(pairs):
    a, b = zip(*pairs)
    ia = [int((x - 1) * 2) for x in a]
    ib = [int((x - 1) * 2) for x in b]
    ref = cohen_kappa_score(ia, ib, weights="quadratic", labels=list(range(9)))
    got = weighted_kappa_quadratic(a, b)
    if math.isnan(ref):
        assert got == 1.0
    else:
        assert got == pytest.approx(ref, abs=1e-9)


def test_weighted_kappa_rejects_off_grid():
    with pytest.raises(ValueError):
        weighted_kappa_quadratic([1.25], [1.0])


# 4 coders x 12 units, the standard worked example for Krippendorff's alpha
RELIABILITY = np.array([
    [1, 2, 3, 3, 2, 1, 4, 1, 2, np.nan, np.nan, np.nan],
    [1, 2, 3, 3, 2, 2, 4, 1, 2, 5, np.nan, 3],
    [np.nan, 3, 3, 3, 2, 3, 4, 2, 2, 5, 1, np.nan],
    [1, 2, 3, 3, 2, 4, 4, 1, 2, 5, 1, np.nan],
])


@pytest.mark.parametrize("metric,expected", [("nominal", 0.743), ("interval", 0.849), ("ordinal", 0.815)])
def test_alpha_worked_example(metric, expected):
    assert krippendorff_alpha(RELIABILITY, metric) == pytest.approx(expected, abs=0.001)


def test_alpha_by_hand_two_units():
    # units (1,1) and (1,2): o = {11:2, 12:1, 21:1}, n=4, n1=3, n2=1
    # nominal D_o = 2, D_e = 2*3*1 = 6, alpha = 1 - 3*2/6 = 0
    assert krippendorff_alpha([[1, 1], [1, 2]], "nominal") == pytest.approx(0.0)
    assert krippendorff_alpha([[1, 2], [1, 2]], "nominal") == pytest.approx(1.0)


# Shrout and Fleiss' 6 targets x 4 judges
SHROUT_FLEISS = [[9, 2, 5, 8], [6, 1, 3, 2], [8, 4, 6, 8], [7, 1, 2, 6], [10, 5, 6, 9], [6, 2, 4, 7]]


def test_icc_worked_example():
    assert icc_2_1(SHROUT_FLEISS) == pytest.approx(0.29, abs=0.005)


def test_icc_perfect_agreement():
    x = [[1, 1, 1], [3, 3, 3], [5, 5, 5]]
    assert icc_2_1(x) == pytest.approx(1.0)


@given(st.lists(st.lists(st.integers(1, 5), min_size=3, max_size=3), min_size=3, max_size=12))
def test_icc_upper_bound(rows):
    v = icc_2_1(rows)
    assert math.isnan(v) or v <= 1.0 + 1e-9


# --------------------------------------------------------------------------- correlation

def test_spearman_matches_scipy():
    a, b = [1, 2, 3, 4, 5, 6], [2, 1, 4, 3, 6, 5]
    ref = sps.spearmanr(a, b)
    res = spearman_rho(a, b)
    assert res.statistic == pytest.approx(ref.statistic)
    assert res.p_value == pytest.approx(ref.pvalue)
    with pytest.raises(ValueError):
        spearman_rho([1, 2], [1, 2])


def test_result_bounds_enforced():
    with pytest.raises(ValueError):
        TestResult(0.0, 1.5)
    with pytest.raises(ValueError):
        TestResult(0.0, ci=(1.0, 0.0))
