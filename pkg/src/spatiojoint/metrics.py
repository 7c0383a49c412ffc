"""Estimator-quality metrics, predictive scores and the extended BIC."""

from __future__ import annotations

import numpy as np
from scipy import integrate, stats

from .errors import ValidationError
from .model import Dataset, FixedEffects, Hyperparameters

Z95 = 1.959963984540054


def _relative_errors(estimates, truth) -> np.ndarray:
    if truth == 0:
        raise ValidationError("relative errors are undefined for a true value of 0")
    return (np.asarray(estimates, dtype=float) - truth) / truth * 100.0


def relative_bias(estimates, truth: float) -> float:
    return float(np.mean(_relative_errors(estimates, truth)))


def rrmse(estimates, truth: float) -> float:
    return float(np.sqrt(np.mean(_relative_errors(estimates, truth) ** 2)))


def ree(estimate, truth: float):
    out = _relative_errors(estimate, truth)
    return float(out) if out.ndim == 0 else out


def clopper_pearson(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    """Exact binomial confidence interval for a proportion (as fractions)."""
    if trials <= 0:
        raise ValidationError("coverage needs at least one trial")
    if not 0 <= successes <= trials:
        raise ValidationError("successes must lie in [0, trials]")
    alpha = 1.0 - level
    lo = 0.0 if successes == 0 else stats.beta.ppf(alpha / 2, successes, trials - successes + 1)
    hi = 1.0 if successes == trials else stats.beta.ppf(1 - alpha / 2, successes + 1, trials - successes)
    return float(lo), float(hi)


def coverage_rate(estimates, ses, truth: float, level: float = 0.95):
    """Percentage of Wald intervals containing ``truth`` with its exact 95% CI (percent)."""
    est = np.asarray(estimates, dtype=float)
    se = np.asarray(ses, dtype=float)
    if est.size == 0:
        raise ValidationError("coverage needs at least one estimate")
    hits = int(np.sum(np.abs(est - truth) <= Z95 * se))
    lo, hi = clopper_pearson(hits, est.size, level)
    return 100.0 * hits / est.size, (100.0 * lo, 100.0 * hi)


def icc(truth_values, estimated_values) -> float:
    """One-way random-effects ICC(1,1), true and estimated values as two raters."""
    x = np.column_stack([np.asarray(truth_values, float), np.asarray(estimated_values, float)])
    n, k = x.shape
    if n < 2:
        raise ValidationError("ICC needs at least two subjects")
    subject_means = x.mean(axis=1)
    msb = k * np.sum((subject_means - x.mean()) ** 2) / (n - 1)
    msw = np.sum((x - subject_means[:, None]) ** 2) / (n * (k - 1))
    denom = msb + (k - 1) * msw
    if denom == 0:
        return 1.0
    return float((msb - msw) / denom)


def c_index_truncated(risk_scores, event_times, event_indicators, horizon: float) -> float:
    """Harrell's C restricted to pairs whose earlier time is an event before ``horizon``.

    Higher risk should go with earlier events; tied scores count one half.
    """
    risk = np.asarray(risk_scores, dtype=float)
    t = np.asarray(event_times, dtype=float)
    d = np.asarray(event_indicators, dtype=bool)
    num = 0.0
    den = 0
    for i in np.flatnonzero(d & (t <= horizon)):
        later = t > t[i]
        n = int(later.sum())
        if not n:
            continue
        r = risk[later]
        num += np.sum(risk[i] > r) + 0.5 * np.sum(risk[i] == r)
        den += n
    if den == 0:
        raise ValidationError("no comparable pairs before the horizon")
    return float(num / den)


def censoring_survival(event_times, event_indicators):
    """Kaplan-Meier estimate of the censoring survival G.

    Returns ``(G, G_left)``, callables giving G(t) and its left limit G(t-).
    """
    t = np.asarray(event_times, dtype=float)
    censored = ~np.asarray(event_indicators, dtype=bool)
    grid = np.unique(t)
    at_risk = t.size - np.searchsorted(np.sort(t), grid, side="left")
    n_cens = np.array([np.sum(censored & (t == u)) for u in grid])
    steps = np.cumprod(1.0 - n_cens / at_risk)

    def G(x):
        idx = np.searchsorted(grid, np.asarray(x, dtype=float), side="right") - 1
        return np.where(idx >= 0, steps[np.maximum(idx, 0)], 1.0)

    def G_left(x):
        idx = np.searchsorted(grid, np.asarray(x, dtype=float), side="left") - 1
        return np.where(idx >= 0, steps[np.maximum(idx, 0)], 1.0)

    return G, G_left


def brier_scores(predicted_survival, event_times, event_indicators, grid) -> np.ndarray:
    """IPCW Brier score at each grid time; ``predicted_survival`` is (n, len(grid))."""
    pred = np.asarray(predicted_survival, dtype=float)
    t = np.asarray(event_times, dtype=float)
    d = np.asarray(event_indicators, dtype=bool)
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if pred.shape != (t.size, grid.size):
        raise ValidationError(f"predictions must have shape ({t.size}, {grid.size})")
    G, G_left = censoring_survival(t, d)
    g_event = G_left(t)
    out = np.empty(grid.size)
    for j, s in enumerate(grid):
        died = (t <= s) & d
        alive = t > s
        with np.errstate(divide="ignore", invalid="ignore"):
            term = np.where(died, pred[:, j] ** 2 / g_event, 0.0)
            term += np.where(alive, (1.0 - pred[:, j]) ** 2 / G(s), 0.0)
        out[j] = np.mean(term)
    return out


def integrated_brier_score(predicted_survival, event_times, event_indicators, grid) -> float:
    """Time-averaged IPCW Brier score over ``grid`` (trapezoidal rule)."""
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    bs = brier_scores(predicted_survival, event_times, event_indicators, grid)
    if grid.size == 1:
        return float(bs[0])
    return float(integrate.trapezoid(bs, grid) / (grid[-1] - grid[0]))


def cumulative_dynamic_auc(risk_scores, event_times, event_indicators, times):
    """IPCW cumulative/dynamic AUC at each time and their arithmetic mean.

    ``risk_scores`` is (n,) or (n, len(times)).
    """
    t = np.asarray(event_times, dtype=float)
    d = np.asarray(event_indicators, dtype=bool)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    risk = np.asarray(risk_scores, dtype=float)
    if risk.ndim == 1:
        risk = np.repeat(risk[:, None], times.size, axis=1)
    _, G_left = censoring_survival(t, d)
    weights = 1.0 / G_left(t)
    aucs = np.empty(times.size)
    for j, s in enumerate(times):
        cases = np.flatnonzero((t <= s) & d)
        controls = t > s
        if cases.size == 0 or not controls.any():
            raise ValidationError(f"no cases or no controls at time {s}")
        rc = risk[controls, j]
        num = 0.0
        for i in cases:
            num += weights[i] * (np.sum(risk[i, j] > rc) + 0.5 * np.sum(risk[i, j] == rc))
        aucs[j] = num / (weights[cases].sum() * rc.size)
    return aucs, float(aucs.mean())


def bic_parameter_counts(n_outcomes: int, n_events: int, n_sources: int) -> tuple[int, int]:
    """(d_R, d_F): parameters tied to random effects and the remaining fixed effects."""
    K, L, Ns = n_outcomes, n_events, n_sources
    return 3, 3 * K + 2 * L + (K - 1) * Ns + L * Ns


def bic_penalty(n_outcomes: int, n_events: int, n_sources: int, n_patients: int, n_obs: int) -> float:
    d_r, d_f = bic_parameter_counts(n_outcomes, n_events, n_sources)
    return d_r * np.log(n_patients) + d_f * np.log(n_obs)


def extended_bic(fit, dataset: Dataset) -> float:
    """-2 L + d_R log N + d_F log n_tot with L the complete-data log-likelihood at
    (theta_hat, latent means, posterior-mean random effects); n_tot counts scalar
    observations (visits x outcomes)."""
    from .estimation import complete_log_likelihood

    theta: FixedEffects = fit.theta_hat
    hyper: Hyperparameters = fit.hyper
    loglik = complete_log_likelihood(dataset, theta, fit.re_posterior_mean, hyper)
    n_obs = int(dataset.flat()["values"].size)
    penalty = bic_penalty(hyper.n_outcomes, hyper.n_events, hyper.n_sources, dataset.n_patients, n_obs)
    return float(-2.0 * loglik + penalty)
