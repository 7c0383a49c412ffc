import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize, special

from spatiojoint.errors import ValidationError
from spatiojoint.metrics import (
    bic_parameter_counts,
    bic_penalty,
    brier_scores,
    c_index_truncated,
    clopper_pearson,
    coverage_rate,
    cumulative_dynamic_auc,
    icc,
    integrated_brier_score,
    ree,
    relative_bias,
    rrmse,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


# --- estimator quality ---------------------------------------------------------------


def test_relative_errors_trivial_cases():
    assert relative_bias([2.0, 2.0], 2.0) == 0.0
    assert relative_bias([1.1, 0.9], 1.0) == pytest.approx(0.0)
    assert rrmse([1.0, 1.0], 1.0) == 0.0
    assert rrmse([1.2], 1.0) == pytest.approx(20.0)
    assert ree(1.2, 1.0) == pytest.approx(20.0)
    assert ree(-0.5, -1.0) == pytest.approx(-50.0)
    with pytest.raises(ValidationError):
        relative_bias([1.0], 0.0)


def test_relative_errors_match_direct_oracle(rng):
    est = rng.normal(3.0, 0.4, 50)
    truth = 2.7
    rel = [(e - truth) / truth * 100 for e in est]
    assert relative_bias(est, truth) == pytest.approx(sum(rel) / len(rel))
    assert rrmse(est, truth) == pytest.approx((sum(r * r for r in rel) / len(rel)) ** 0.5)
    assert np.allclose(ree(est, truth), rel)


@given(st.lists(finite, min_size=1, max_size=30), finite.filter(lambda x: abs(x) > 1e-3))
def test_rrmse_dominates_bias(values, truth):
    assert rrmse(values, truth) >= abs(relative_bias(values, truth)) - 1e-9


# --- coverage -------------------------------------------------------------------------


def _cp_oracle(x, n, alpha=0.05):
    """Clopper-Pearson bounds from the regularised incomplete beta tail equations."""
    def upper_tail(p):  # P(X >= x | p)
        return special.betainc(x, n - x + 1, p)

    def lower_tail(p):  # P(X <= x | p)
        return 1.0 - special.betainc(x + 1, n - x, p)

    lo = 0.0 if x == 0 else optimize.brentq(lambda p: upper_tail(p) - alpha / 2, 1e-12, 1 - 1e-12)
    hi = 1.0 if x == n else optimize.brentq(lambda p: lower_tail(p) - alpha / 2, 1e-12, 1 - 1e-12)
    return lo, hi


def test_clopper_pearson_reference_interval():
    lo, hi = clopper_pearson(94, 100)
    assert (round(100 * lo, 1), round(100 * hi, 1)) == (87.4, 97.8)


def test_clopper_pearson_all_successes():
    lo, hi = clopper_pearson(10, 10)
    assert hi == 1.0
    assert lo == pytest.approx(0.025 ** 0.1, abs=1e-10)
    assert lo == pytest.approx(_cp_oracle(10, 10)[0], abs=1e-10)


@pytest.mark.parametrize("x,n", [(0, 7), (3, 20), (94, 100), (250, 300)])
def test_clopper_pearson_matches_incomplete_beta_oracle(x, n):
    assert np.allclose(clopper_pearson(x, n), _cp_oracle(x, n), atol=1e-9)


def test_clopper_pearson_undefined_without_trials():
    with pytest.raises(ValidationError):
        clopper_pearson(0, 0)
    with pytest.raises(ValidationError):
        coverage_rate([], [], 1.0)


@given(st.integers(1, 400).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))))
def test_clopper_pearson_brackets_point_estimate(xn):
    x, n = xn
    lo, hi = clopper_pearson(x, n)
    assert 0.0 <= lo <= x / n <= hi <= 1.0


def test_coverage_rate_counts_hits():
    rate, (lo, hi) = coverage_rate([1.0, 1.5, 3.0, 0.9], [0.3, 0.3, 0.3, 0.3], 1.0)
    assert rate == 75.0
    assert lo < 75.0 < hi


# --- ICC ------------------------------------------------------------------------------


def _icc_anova(a, b):
    n = len(a)
    grand = (sum(a) + sum(b)) / (2 * n)
    ssb = sum(2 * ((x + y) / 2 - grand) ** 2 for x, y in zip(a, b))
    ssw = sum((x - (x + y) / 2) ** 2 + (y - (x + y) / 2) ** 2 for x, y in zip(a, b))
    msb, msw = ssb / (n - 1), ssw / n
    return (msb - msw) / (msb + msw)


def test_icc_identity_and_reversal(rng):
    x = rng.normal(size=40)
    assert icc(x, x) == pytest.approx(1.0)
    c = x - x.mean()
    assert icc(c, -c) <= 0.0


def test_icc_matches_anova_oracle(rng):
    a = rng.normal(size=25)
    b = a + rng.normal(scale=0.5, size=25) + 0.2
    assert icc(a, b) == pytest.approx(_icc_anova(list(a), list(b)), rel=1e-12)


# --- concordance ------------------------------------------------------------------------


def test_c_index_hand_cases():
    assert c_index_truncated([0.9, 0.1], [1.0, 2.0], [1, 0], 1.5) == 1.0
    assert c_index_truncated([0.1, 0.9], [1.0, 2.0], [1, 0], 1.5) == 0.0
    assert c_index_truncated([0.5, 0.5], [1.0, 2.0], [1, 0], 1.5) == 0.5
    with pytest.raises(ValidationError):
        c_index_truncated([0.9, 0.1], [1.0, 2.0], [1, 0], 0.5)


def test_c_index_perfect_and_random(rng):
    t = rng.exponential(2.0, 300)
    d = rng.random(300) < 0.7
    assert c_index_truncated(-t, t, d, 10.0) == 1.0
    # pairs share subjects, so the spread is set by the number of subjects
    n = 10_000
    t = rng.exponential(1.0, n)
    d = np.ones(n, bool)
    assert abs(c_index_truncated(rng.random(n), t, d, np.median(t)) - 0.5) < 0.02


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_concordance_invariant_to_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    t = rng.exponential(1.0, 40)
    d = rng.random(40) < 0.8
    d[np.argmin(t)] = True
    risk = rng.normal(size=40)
    horizon = float(np.quantile(t, 0.7))
    for transform in (np.exp, lambda r: 3 * r ** 3 + r):
        assert c_index_truncated(transform(risk), t, d, horizon) == c_index_truncated(risk, t, d, horizon)
        a1, m1 = cumulative_dynamic_auc(transform(risk), t, d, [horizon])
        a0, m0 = cumulative_dynamic_auc(risk, t, d, [horizon])
        assert m1 == pytest.approx(m0)


# --- Brier --------------------------------------------------------------------------------


def test_ibs_perfect_and_uninformative():
    t = np.array([1.0, 2.0, 3.0, 4.0])
    d = np.ones(4, bool)
    grid = np.array([0.5, 1.5, 2.5, 3.5])
    perfect = (t[:, None] > grid[None, :]).astype(float)
    assert integrated_brier_score(perfect, t, d, grid) == 0.0
    assert np.allclose(brier_scores(np.full((4, 4), 0.5), t, d, grid), 0.25)
    assert integrated_brier_score(np.full((4, 4), 0.5), t, d, grid) == pytest.approx(0.25)


def test_brier_censored_hand_case():
    t = np.array([1.0, 2.0, 3.0, 4.0])
    d = np.array([1, 0, 1, 1], bool)
    pred = np.array([[0.2], [0.5], [0.7], [0.9]])
    # G = 1 before the censoring at 2, then 2/3; survivors past 2.5 weigh 3/2
    expected = (0.2 ** 2 * 1.0 + 0.3 ** 2 * 1.5 + 0.1 ** 2 * 1.5) / 4
    assert brier_scores(pred, t, d, [2.5])[0] == pytest.approx(expected)


def test_ibs_invariant_to_patient_order(rng):
    t = rng.exponential(2.0, 30)
    d = rng.random(30) < 0.7
    grid = np.linspace(0.2, 2.0, 7)
    pred = rng.random((30, 7))
    perm = rng.permutation(30)
    assert integrated_brier_score(pred, t, d, grid) == pytest.approx(
        integrated_brier_score(pred[perm], t[perm], d[perm], grid), rel=1e-12)


def test_brier_rejects_shape_mismatch():
    with pytest.raises(ValidationError):
        brier_scores(np.zeros((3, 2)), [1, 2, 3], [1, 1, 1], [1.0])


# --- AUC ----------------------------------------------------------------------------------


def test_auc_hand_cases():
    aucs, mean = cumulative_dynamic_auc([0.8, 0.3], [1.0, 3.0], [1, 0], [2.0])
    assert mean == 1.0
    _, mean = cumulative_dynamic_auc([0.3, 0.8], [1.0, 3.0], [1, 0], [2.0])
    assert mean == 0.0


def test_auc_perfect_and_random(rng):
    t = rng.exponential(1.0, 400)
    d = np.ones(400, bool)
    times = np.quantile(t, [0.25, 0.5, 0.75])
    aucs, mean = cumulative_dynamic_auc(-t, t, d, times)
    assert np.all(aucs == 1.0) and mean == 1.0
    n = 10_000
    t = rng.exponential(1.0, n)
    _, mean = cumulative_dynamic_auc(rng.random(n), t, np.ones(n, bool), np.quantile(t, [0.25, 0.5, 0.75]))
    assert abs(mean - 0.5) < 0.03


def test_auc_mean_is_arithmetic(rng):
    t = rng.exponential(1.0, 100)
    d = rng.random(100) < 0.8
    times = np.quantile(t, [0.3, 0.6])
    aucs, mean = cumulative_dynamic_auc(rng.random(100), t, d, times)
    assert mean == pytest.approx(aucs.mean())


# --- BIC ----------------------------------------------------------------------------------


def test_bic_counts_by_hand():
    # t0, sigma_tau, sigma_xi | g(4) v0(4) sigma(4) nu(2) rho(2) beta(3x2) zeta(2x2)
    assert bic_parameter_counts(4, 2, 2) == (3, 26)
    pen = bic_penalty(4, 2, 2, n_patients=300, n_obs=8000)
    assert pen == pytest.approx(3 * np.log(300) + 26 * np.log(8000))


@pytest.mark.parametrize("ns", [1, 2])
def test_adding_a_source_adds_its_loadings(ns):
    K, L, n_obs = 4, 2, 8000
    step = bic_penalty(K, L, ns + 1, 300, n_obs) - bic_penalty(K, L, ns, 300, n_obs)
    assert step == pytest.approx((K - 1 + L) * np.log(n_obs))
    assert step > 0
