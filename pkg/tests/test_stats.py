import hashlib
import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from macs.errors import DegenerateTestError, InputError, UndefinedMetricError
from macs.stats import (
    RngSpec,
    SurvivalObservation,
    bootstrap_diff_ci,
    bootstrap_values,
    category_percentages,
    chi2_sf,
    describe,
    km_fit,
    km_median,
    km_median_ci,
    logrank,
    percentile_ci,
    quantile,
    stream_id,
)

# ---------------------------------------------------------------- oracles


def oracle_rng(seed, stream, *path):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream, *path])))


def oracle_quantile(values, q):
    v = sorted(values)
    h = (len(v) - 1) * q
    lo = math.floor(h)
    if lo + 1 >= len(v):
        return v[lo]
    return v[lo] + (h - lo) * (v[lo + 1] - v[lo])


def oracle_logrank(a, b):
    """Exact tabulation with Fractions: a, b are lists of (time, event)."""
    times = sorted({t for t, e in a + b if e})
    o_minus_e = Fraction(0)
    var = Fraction(0)
    for t in times:
        n_a = sum(1 for s, _ in a if s >= t)
        n_b = sum(1 for s, _ in b if s >= t)
        d_a = sum(1 for s, e in a if s == t and e)
        d = d_a + sum(1 for s, e in b if s == t and e)
        n = n_a + n_b
        o_minus_e += d_a - Fraction(d * n_a, n)
        if n > 1:
            var += Fraction(d * n_a * n_b * (n - d), n * n * (n - 1))
    return o_minus_e**2 / var


# ---------------------------------------------------------------- KM


def test_km_hand_oracle_five_subjects():
    curve = km_fit([1, 2, 3, 4, 5], [True, False, True, False, True])
    expected = [Fraction(4, 5), Fraction(4, 5) * Fraction(2, 3), Fraction(0)]
    assert curve.event_times.tolist() == [1, 3, 5]
    assert curve.at_risk.tolist() == [5, 3, 1]
    assert curve.deaths.tolist() == [1, 1, 1]
    for got, want in zip(curve.survival, expected):
        assert got == float(want)
    assert km_median(curve) == 5


def test_km_accepts_observation_objects():
    obs = [SurvivalObservation(t, e) for t, e in [(1, True), (2, False), (3, True)]]
    assert km_fit(obs).survival.tolist() == km_fit([1, 2, 3], [True, False, True]).survival.tolist()


def test_km_uncensored_median_boundary():
    assert km_median(km_fit([1, 2, 3, 4], [True] * 4)) == 2


def test_km_all_censored_never_reaches_median():
    curve = km_fit([3, 4], [False, False])
    assert curve.event_times.size == 0
    assert km_median(curve) is None


def test_km_censored_at_event_time_stays_at_risk():
    curve = km_fit([2, 2, 5], [True, False, True])
    assert curve.at_risk.tolist() == [3, 1]


@pytest.mark.parametrize("seed", range(100))
def test_km_without_censoring_is_empirical_survival(seed):
    rng = np.random.default_rng(seed)
    t = rng.integers(1, 30, size=rng.integers(1, 40)).astype(float)
    curve = km_fit(t, np.ones(t.size, bool))
    for time, s in zip(curve.event_times, curve.survival):
        assert s == pytest.approx(np.mean(t > time), abs=1e-12)


@given(st.lists(st.tuples(st.integers(0, 50), st.booleans()), min_size=1, max_size=40))
def test_km_product_identity_and_monotone(data):
    t = [x for x, _ in data]
    e = [y for _, y in data]
    curve = km_fit(t, e)
    prod = 1.0
    for d, n, s in zip(curve.deaths, curve.at_risk, curve.survival):
        prod *= 1 - d / n
        assert s == pytest.approx(prod, abs=1e-12)
    assert np.all(np.diff(curve.survival) <= 0)
    assert np.all((curve.survival >= 0) & (curve.survival <= 1))


@given(st.lists(st.tuples(st.integers(0, 50), st.booleans()), min_size=1, max_size=30), st.integers(1, 20))
def test_censoring_after_last_event_is_indistinguishable(data, extra):
    t = [x for x, _ in data]
    e = [y for _, y in data]
    last = max([x for x, y in data if y], default=0)
    # where exactly a subject is censored beyond the last event cannot matter
    a = km_fit(t + [last + 1], e + [False])
    b = km_fit(t + [last + 1 + extra], e + [False])
    np.testing.assert_array_equal(a.event_times, b.event_times)
    np.testing.assert_array_equal(a.survival, b.survival)


def test_km_rejects_bad_input():
    with pytest.raises(InputError):
        km_fit([], [])
    with pytest.raises(InputError):
        km_fit([-1.0], [True])
    with pytest.raises(InputError):
        SurvivalObservation(float("inf"), True)


def test_km_curve_csv():
    text = km_fit([1, 2], [True, True]).to_csv()
    assert text.splitlines()[0] == "time,survival,at_risk,deaths"
    assert text.splitlines()[1] == "1,0.5,2,1"


# ---------------------------------------------------------------- log-rank


def test_logrank_separated_groups_match_fraction_oracle():
    a, b = [(1, True), (2, True), (3, True)], [(4, True), (5, True), (6, True)]
    want = oracle_logrank(a, b)
    res = logrank([1, 2, 3], [True] * 3, [4, 5, 6], [True] * 3)
    assert res.statistic == pytest.approx(float(want), rel=1e-12)
    assert res.p_value == pytest.approx(float(mpmath.erfc(mpmath.sqrt(mpmath.mpf(want.numerator) / want.denominator / 2))), rel=1e-10)


@given(st.lists(st.tuples(st.integers(0, 20), st.booleans()), min_size=1, max_size=25),
       st.lists(st.tuples(st.integers(0, 20), st.booleans()), min_size=1, max_size=25))
def test_logrank_matches_oracle_and_is_symmetric(a, b):
    if not any(e for _, e in a) or not any(e for _, e in b):
        return
    ta, ea = zip(*a)
    tb, eb = zip(*b)
    try:
        res = logrank(ta, ea, tb, eb)
    except DegenerateTestError:
        return
    swapped = logrank(tb, eb, ta, ea)
    assert res.statistic == pytest.approx(float(oracle_logrank(list(a), list(b))), rel=1e-9, abs=1e-12)
    assert swapped.statistic == pytest.approx(res.statistic, rel=1e-12, abs=1e-15)
    assert swapped.p_value == pytest.approx(res.p_value, rel=1e-12)


def test_logrank_identical_groups():
    rng = np.random.default_rng(4)
    t = rng.exponential(5, 30)
    e = rng.random(30) < 0.7
    res = logrank(t, e, t, e)
    assert res.statistic <= 1e-12
    assert res.p_value >= 0.999


def test_logrank_separated_exponentials_are_significant():
    rng = np.random.default_rng(0)
    a = rng.exponential(3.03 / math.log(2), 300)
    b = rng.exponential(1.16 / math.log(2), 300)
    assert logrank(a, np.ones(300, bool), b, np.ones(300, bool)).p_value < 1e-3


def test_logrank_degenerate_and_invalid():
    with pytest.raises(DegenerateTestError):
        logrank([1], [True], [1], [True])
    with pytest.raises(InputError):
        logrank([1], [False], [2], [True])


# ---------------------------------------------------------------- chi-square


@pytest.mark.parametrize("x, want, tol", [(0.0, 1.0, 0), (3.841459, 0.05, 1e-4), (10.8276, 0.001, 1e-5)])
def test_chi2_sf_examples(x, want, tol):
    assert abs(chi2_sf(x) - want) <= tol


@given(st.floats(0, 200, allow_nan=False))
def test_chi2_sf_matches_high_precision_erfc(x):
    mpmath.mp.dps = 40
    want = mpmath.erfc(mpmath.sqrt(mpmath.mpf(x) / 2))
    assert abs(chi2_sf(x) - float(want)) <= 1e-10


@given(st.floats(0, 100), st.floats(1e-6, 10))
def test_chi2_sf_decreasing(x, dx):
    assert chi2_sf(x + dx) <= chi2_sf(x)


def test_chi2_sf_rejects():
    with pytest.raises(InputError):
        chi2_sf(-1)
    with pytest.raises(InputError):
        chi2_sf(1, df=2)


# ---------------------------------------------------------------- quantiles


def test_quantile_examples():
    assert quantile([1, 2, 3, 4], 0.5) == 2.5
    assert quantile([10, 20, 30], 0.25) == 15.0
    assert quantile([5, 1, 9], 0) == 1 and quantile([5, 1, 9], 1) == 9


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50), st.floats(0, 1))
def test_quantile_matches_oracle(values, q):
    assert quantile(values, q) == pytest.approx(oracle_quantile(values, q), rel=1e-12, abs=1e-9)


def test_quantile_with_infinity():
    assert quantile([1.0, math.inf], 0.5) == math.inf
    assert quantile([1.0, 2.0, math.inf], 0.25) == 1.5
    assert quantile([1.0, 2.0, math.inf], 0.75) == math.inf


def test_describe_and_percentages():
    assert describe(range(1, 101)) == (50.5, 25.75, 75.25)
    assert describe([7]) == (7, 7, 7)
    assert category_percentages("aabc") == {"a": 50.0, "b": 25.0, "c": 25.0}
    for fn in (describe, category_percentages):
        with pytest.raises(InputError):
            fn([])
    with pytest.raises(InputError):
        quantile([], 0.5)


# ---------------------------------------------------------------- RNG streams


def test_rngspec_streams():
    assert stream_id("cv") == stream_id("cv") != stream_id("split")
    spec = RngSpec(3)
    assert spec.child("a") == spec.child("a")
    assert spec.child("a") != spec.child("b")
    assert spec.generator(1).random() == oracle_rng(3, 0, 1).random()
    children = {RngSpec(3).child(i).stream for i in range(5000)}
    assert len(children) == 5000
    with pytest.raises(InputError):
        RngSpec(-1)


# ---------------------------------------------------------------- bootstrap


def test_bootstrap_values_match_brute_force():
    x = np.random.default_rng(1).normal(size=60)
    spec = RngSpec(9, 4)
    got = bootstrap_values(np.mean, x, 300, spec)
    want = [np.mean(x[oracle_rng(9, 4, b).integers(0, 60, size=60)]) for b in range(300)]
    np.testing.assert_array_equal(got, want)


def test_bootstrap_is_deterministic_and_worker_invariant():
    x = np.random.default_rng(2).exponential(size=80)
    a = percentile_ci(bootstrap_values(np.median, x, 500, RngSpec(1)))
    b = percentile_ci(bootstrap_values(np.median, x, 500, RngSpec(1)))
    c = percentile_ci(bootstrap_values(np.median, x, 500, RngSpec(1), workers=4))
    assert a == b == c
    assert a != percentile_ci(bootstrap_values(np.median, x, 500, RngSpec(2)))


def test_percentile_ci_undefined_fraction():
    vals = np.r_[np.ones(94), np.full(6, np.nan)]
    with pytest.raises(UndefinedMetricError, match="auc"):
        percentile_ci(vals, name="auc")
    assert percentile_ci(np.r_[np.ones(95), np.full(5, np.nan)]) == (1.0, 1.0)


def test_constant_statistic_collapses_interval():
    x = np.arange(20.0)
    assert percentile_ci(bootstrap_values(lambda s: 3.0, x, 100, RngSpec(0))) == (3.0, 3.0)


def _key(sample):
    a = np.ascontiguousarray(sample)
    h = hashlib.sha256(repr((a.shape, a.dtype.str)).encode())
    h.update(a.tobytes())
    return int.from_bytes(h.digest()[:8], "little")


def test_bootstrap_diff_matches_brute_force_50_45():
    rng = np.random.default_rng(12)
    a, b = rng.normal(1, 1, 50), rng.normal(0, 1, 45)
    point, lo, hi = bootstrap_diff_ci(np.median, a, b, 400, RngSpec(5, 2))
    ka, kb = _key(a), _key(b)
    diffs = [
        np.median(a[oracle_rng(5, 2, i, ka).integers(0, 50, size=50)])
        - np.median(b[oracle_rng(5, 2, i, kb).integers(0, 45, size=45)])
        for i in range(400)
    ]
    assert point == np.median(a) - np.median(b)
    assert (lo, hi) == (oracle_quantile(diffs, 0.025), oracle_quantile(diffs, 0.975))
    assert (point, lo, hi) == bootstrap_diff_ci(np.median, a, b, 400, RngSpec(5, 2), workers=3)


def test_bootstrap_diff_identical_and_swapped():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=40), rng.normal(size=30)
    assert bootstrap_diff_ci(np.mean, a, a.copy(), 200, RngSpec(1)) == (0.0, 0.0, 0.0)
    p1, lo1, hi1 = bootstrap_diff_ci(np.mean, a, b, 200, RngSpec(1))
    p2, lo2, hi2 = bootstrap_diff_ci(np.mean, b, a, 200, RngSpec(1))
    assert p1 == -p2
    assert lo1 == pytest.approx(-hi2, abs=1e-12) and hi1 == pytest.approx(-lo2, abs=1e-12)


def test_bootstrap_diff_errors():
    with pytest.raises(InputError):
        bootstrap_diff_ci(np.mean, [], [1.0])
    with pytest.raises(UndefinedMetricError):
        bootstrap_diff_ci(lambda s: None, [1.0], [2.0], 10)


# ---------------------------------------------------------------- median CI


def test_km_median_ci_matches_brute_force():
    rng = np.random.default_rng(100)
    t = rng.exponential(10, 100)
    e = rng.random(100) < 0.8
    got = km_median_ci(t, e, 300, RngSpec(7))
    meds = []
    for b in range(300):
        idx = oracle_rng(7, 0, b).integers(0, 100, size=100)
        m = km_median(km_fit(t[idx], e[idx]))
        meds.append(math.inf if m is None else m)
    assert sum(math.isinf(m) for m in meds) <= 0.025 * 300
    fin = max(m for m in meds if not math.isinf(m))
    capped = [fin if math.isinf(m) else m for m in meds]
    assert got == (oracle_quantile(capped, 0.025), oracle_quantile(capped, 0.975))
    assert got == km_median_ci(t, e, 300, RngSpec(7), workers=2)


def test_km_median_ci_degenerate_and_open():
    assert km_median_ci([10] * 6, [True] * 6, 50, RngSpec(0)) == (10, 10)
    # heavy censoring: median often not reached, so the upper bound is open
    lo, hi = km_median_ci([1, 2] + [50] * 18, [True, True] + [False] * 18, 200, RngSpec(0))
    assert hi is None
    with pytest.raises(InputError):
        km_median_ci([1, 2], [True, False])
