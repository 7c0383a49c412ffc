"""Complete-data log-likelihood, random-effect gradients and sufficient statistics.

Per-patient terms are computed on the concatenated arrays of a
:class:`~spatiojoint.model.Dataset` and reduced in patient-index order.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from .errors import DomainError, ValidationError
from .model import (
    Dataset,
    FixedEffects,
    Geometry,
    Hyperparameters,
    LatentFixedEffects,
    PatientRecord,
    RandomEffects,
    _logistic,
    space_shift,
    survival_shift,
)

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _gaussian_logpdf(x, mean, sd):
    return -np.log(sd) - LOG_SQRT_2PI - 0.5 * ((x - mean) / sd) ** 2


def segment_sum(values: np.ndarray, flat: dict) -> np.ndarray:
    """Sum per-observation rows into per-patient rows, in patient order."""
    counts = flat["counts"]
    n = counts.size
    if values.shape[0] == 0:
        return np.zeros((n,) + values.shape[1:])
    if np.all(counts > 0):
        return np.add.reduceat(values, flat["starts"], axis=0)
    out = np.zeros((n,) + values.shape[1:])
    np.add.at(out, flat["patient"], values)
    return out


def model_values(flat: dict, fe: FixedEffects, geometry: Geometry, re: RandomEffects) -> np.ndarray:
    """Individual curves at every visit, shape (n_visits, K)."""
    idx = flat["patient"]
    elapsed = np.exp(re.xi)[idx] * (flat["times"] - re.tau[idx])
    w = space_shift(geometry, re.sources)
    x = fe.v0 * elapsed[:, None] + w[idx]
    return _logistic(fe.g, fe.v0, x)


def longitudinal_terms(flat: dict, fe: FixedEffects, gamma: np.ndarray) -> np.ndarray:
    """Per-patient, per-outcome Gaussian log-densities, shape (N, K)."""
    sigma = fe.sigma_noise
    resid = flat["values"] - gamma
    per_obs = -np.log(sigma) - LOG_SQRT_2PI - 0.5 * (resid / sigma) ** 2
    return segment_sum(per_obs, flat)


def survival_terms(flat: dict, fe: FixedEffects, re: RandomEffects) -> np.ndarray:
    """Per-patient survival attachment, shape (N,). Observed events at or
    before the individual reference time give -inf."""
    t_e = flat["event_time"]
    code = flat["event_code"]
    L = fe.n_events
    if np.any(code > L):
        raise ValidationError(f"event codes must lie in 0..{L}")
    u = survival_shift(fe.zeta, re.sources)
    elapsed = np.exp(re.xi) * (t_e - re.tau)
    pos = elapsed > 0
    log_r = np.log(np.where(pos, elapsed, 1.0))[:, None] - np.log(fe.nu)
    cum = np.where(pos[:, None], np.exp(fe.rho * log_r + u), 0.0)
    out = -cum.sum(axis=1)
    obs = code > 0
    if np.any(obs):
        i = np.flatnonzero(obs)
        l = code[i] - 1
        log_h = (np.log(fe.rho[l]) + re.xi[i] - np.log(fe.nu[l])
                 + (fe.rho[l] - 1.0) * log_r[i, l] + u[i, l])
        log_h = np.where(pos[i], log_h, -np.inf)
        out[i] = out[i] + log_h
    return out


def re_prior_terms(re: RandomEffects, fe: FixedEffects) -> np.ndarray:
    """Per-patient log prior density of (xi, tau, sources), shape (N,)."""
    return (
        _gaussian_logpdf(re.tau, fe.t0, fe.sigma_tau)
        + _gaussian_logpdf(re.xi, 0.0, fe.sigma_xi)
        + _gaussian_logpdf(re.sources, 0.0, 1.0).sum(axis=-1)
    )


def _as_cohort(re: RandomEffects) -> RandomEffects:
    return RandomEffects(np.atleast_1d(re.xi), np.atleast_1d(re.tau), np.atleast_2d(re.sources))


def longitudinal_attachment(dataset: Dataset, fe: FixedEffects, re_all: RandomEffects,
                            geometry: Geometry | None = None) -> float:
    if not np.all(fe.sigma_noise > 0):
        raise ValidationError("noise scales must be strictly positive")
    geometry = geometry or Geometry.from_effects(fe)
    flat = dataset.flat()
    re_all = _as_cohort(re_all)
    return float(longitudinal_terms(flat, fe, model_values(flat, fe, geometry, re_all)).sum())


def survival_attachment(dataset: Dataset, fe: FixedEffects, re_all: RandomEffects,
                        geometry: Geometry | None = None) -> float:
    return float(survival_terms(dataset.flat(), fe, _as_cohort(re_all)).sum())


def re_prior(re_all: RandomEffects, fe: FixedEffects) -> float:
    if not (fe.sigma_tau > 0 and fe.sigma_xi > 0):
        raise ValidationError("sigma_tau and sigma_xi must be strictly positive")
    return float(re_prior_terms(_as_cohort(re_all), fe).sum())


def fe_priors(z_fe: LatentFixedEffects, fe_means: FixedEffects, hyper: Hyperparameters):
    """Log prior of the latent fixed effects, split as (longitudinal, survival)."""
    mean = LatentFixedEffects.from_fixed(fe_means)
    longitudinal = (
        _gaussian_logpdf(z_fe.log_g, mean.log_g, hyper.sigma_g).sum()
        + _gaussian_logpdf(z_fe.log_v0, mean.log_v0, hyper.sigma_v0).sum()
        + _gaussian_logpdf(z_fe.beta, mean.beta, hyper.sigma_beta).sum()
    )
    surv = (
        _gaussian_logpdf(z_fe.neg_log_nu, mean.neg_log_nu, hyper.sigma_nu).sum()
        + _gaussian_logpdf(z_fe.log_rho, mean.log_rho, hyper.sigma_rho).sum()
        + _gaussian_logpdf(z_fe.zeta, mean.zeta, hyper.sigma_zeta).sum()
    )
    return float(longitudinal), float(surv)


@dataclass(frozen=True)
class LikelihoodBreakdown:
    longitudinal_attachment: float
    survival_attachment: float
    re_prior: float
    fe_prior_longitudinal: float
    fe_prior_survival: float

    @property
    def total(self) -> float:
        return (self.longitudinal_attachment + self.survival_attachment + self.re_prior
                + self.fe_prior_longitudinal + self.fe_prior_survival)


def total_log_likelihood(dataset: Dataset, fe: FixedEffects, z_fe: LatentFixedEffects,
                         re_all: RandomEffects, geometry: Geometry | None,
                         hyper: Hyperparameters) -> LikelihoodBreakdown:
    """Complete-data log-likelihood at population parameters ``fe`` and latents (z_fe, re_all)."""
    eff = fe.with_latent(z_fe)
    geometry = geometry or Geometry.from_effects(eff)
    fe_long, fe_surv = fe_priors(z_fe, fe, hyper)
    return LikelihoodBreakdown(
        longitudinal_attachment=longitudinal_attachment(dataset, eff, re_all, geometry),
        survival_attachment=survival_attachment(dataset, eff, re_all),
        re_prior=re_prior(re_all, fe),
        fe_prior_longitudinal=fe_long,
        fe_prior_survival=fe_surv,
    )


# --- gradients with respect to one patient's random effects -----------------


class ReGradient(NamedTuple):
    xi: float
    tau: float
    sources: np.ndarray

    def __add__(self, other):
        return ReGradient(self.xi + other.xi, self.tau + other.tau, self.sources + other.sources)

    def scaled(self, fe: FixedEffects) -> "ReGradient":
        """Gradient in standardised coordinates xi/sigma_xi and (tau - t0)/sigma_tau."""
        return ReGradient(self.xi * fe.sigma_xi, self.tau * fe.sigma_tau, self.sources)


def jacobian_random_effects(patient: PatientRecord, fe: FixedEffects, re: RandomEffects,
                            geometry: Geometry | None = None, scaled: bool = False) -> dict:
    """Analytic gradient of each log-likelihood term for one patient.

    Returns a dict with keys ``longitudinal``, ``survival`` and ``prior``
    mapping to :class:`ReGradient`. ``fe`` holds the effective parameters.
    """
    geometry = geometry or Geometry.from_effects(fe)
    xi, tau = float(re.xi), float(re.tau)
    s = np.asarray(re.sources, dtype=float)
    speed = np.exp(xi)
    Ns = s.size

    # longitudinal
    if patient.n_visits:
        elapsed = speed * (patient.times - tau)
        w = geometry.mixing @ s
        gamma = _logistic(fe.g, fe.v0, fe.v0 * elapsed[:, None] + w)
        a = (1.0 + fe.g) ** 2 / fe.g
        c = a * (patient.values - gamma) * gamma * (1.0 - gamma) / fe.sigma_noise ** 2
        d_xi = float(np.sum(c * fe.v0 * elapsed[:, None]))
        d_tau = float(-np.sum(c * fe.v0 * speed))
        d_s = c.sum(axis=0) @ geometry.mixing
    else:
        d_xi, d_tau, d_s = 0.0, 0.0, np.zeros(Ns)
    long_grad = ReGradient(d_xi, d_tau, np.asarray(d_s, dtype=float))

    # survival
    L = fe.n_events
    code = patient.event_code
    u = fe.zeta @ s
    r = speed * (patient.event_time - tau)
    observed = np.zeros(L)
    if code > 0:
        if r <= 0:
            raise DomainError("observed event at or before the individual reference time")
        observed[code - 1] = 1.0
    if r > 0:
        cum = (r / fe.nu) ** fe.rho * np.exp(u)
        log_surv = -cum
        h = fe.rho * speed / fe.nu * (r / fe.nu) ** (fe.rho - 1.0) * np.exp(u)
        sd_xi = float(np.sum(observed * fe.rho + fe.rho * log_surv))
        sd_tau = float(np.sum(-(fe.rho - 1.0) / (patient.event_time - tau) * observed + h))
        sd_s = (observed + log_surv) @ fe.zeta
    else:
        sd_xi, sd_tau, sd_s = 0.0, 0.0, np.zeros(Ns)
    surv_grad = ReGradient(sd_xi, sd_tau, np.asarray(sd_s, dtype=float))

    prior_grad = ReGradient(-xi / fe.sigma_xi ** 2, -(tau - fe.t0) / fe.sigma_tau ** 2, -s)

    out = {"longitudinal": long_grad, "survival": surv_grad, "prior": prior_grad}
    if scaled:
        out = {k: v.scaled(fe) for k, v in out.items()}
    return out


def patient_log_likelihood(patient: PatientRecord, fe: FixedEffects, re: RandomEffects,
                           geometry: Geometry | None = None) -> dict:
    """The three random-effect-dependent terms for a single patient."""
    geometry = geometry or Geometry.from_effects(fe)
    ds = Dataset([patient], n_outcomes=fe.n_outcomes)
    cohort = _as_cohort(re)
    flat = ds.flat()
    return {
        "longitudinal": float(longitudinal_terms(flat, fe, model_values(flat, fe, geometry, cohort)).sum()),
        "survival": float(survival_terms(flat, fe, cohort).sum()),
        "prior": float(re_prior_terms(cohort, fe).sum()),
    }


# --- sufficient statistics ---------------------------------------------------


@dataclass
class SufficientStatistics:
    """Sufficient statistics of the complete-data likelihood.

    s1..s3 are kept per visit and outcome (shape (n_visits, K)) so that noise
    scales can be normalised per outcome; row sums give the per-visit
    quantities |y|^2, y.gamma and |gamma|^2. ``survival`` is the survival
    attachment, which carries no population parameter and enters the
    reconstruction as a base-measure term.
    """

    s1: np.ndarray
    s2: np.ndarray
    s3: np.ndarray
    s4: np.ndarray
    s5: np.ndarray
    s6: np.ndarray
    s7: np.ndarray
    s8: np.ndarray
    s9: np.ndarray
    s10: np.ndarray
    s11: np.ndarray
    s12: np.ndarray
    s13: np.ndarray
    s14: np.ndarray
    s15: np.ndarray
    s16: np.ndarray
    s17: np.ndarray
    s18: np.ndarray
    s19: np.ndarray
    s20: np.ndarray
    s21: np.ndarray
    survival: float = 0.0

    def items(self):
        for f in fields(self):
            yield f.name, getattr(self, f.name)

    def copy(self) -> "SufficientStatistics":
        return SufficientStatistics(**{k: np.copy(v) if k != "survival" else v for k, v in self.items()})

    def visit_norms(self) -> np.ndarray:
        """Per-visit |y_ij|^2."""
        return self.s1.sum(axis=1)


def sufficient_statistics(dataset: Dataset, z_fe: LatentFixedEffects, re_all: RandomEffects,
                          fe: FixedEffects, gamma: np.ndarray | None = None) -> SufficientStatistics:
    """Sufficient statistics at latents (z_fe, re_all); ``fe`` supplies t0 and the
    noise-free structure needed to evaluate the curves."""
    flat = dataset.flat()
    eff = fe.with_latent(z_fe)
    re_all = _as_cohort(re_all)
    if gamma is None:
        gamma = model_values(flat, eff, Geometry.from_effects(eff), re_all)
    y = flat["values"]
    return SufficientStatistics(
        s1=y ** 2,
        s2=y * gamma,
        s3=gamma ** 2,
        s4=z_fe.log_v0 ** 2,
        s5=z_fe.log_v0.copy(),
        s6=z_fe.log_g ** 2,
        s7=z_fe.log_g.copy(),
        s8=z_fe.beta ** 2,
        s9=z_fe.beta.copy(),
        s10=z_fe.neg_log_nu ** 2,
        s11=z_fe.neg_log_nu.copy(),
        s12=z_fe.log_rho ** 2,
        s13=z_fe.log_rho.copy(),
        s14=z_fe.zeta ** 2,
        s15=z_fe.zeta.copy(),
        s16=re_all.tau ** 2,
        s17=re_all.tau.copy(),
        s18=re_all.xi ** 2,
        s19=re_all.xi.copy(),
        s20=re_all.sources ** 2,
        s21=re_all.sources.copy(),
        survival=float(survival_terms(flat, eff, re_all).sum()),
    )


def _gaussian_family(sq, lin, mean, sd):
    """-n log(sd sqrt(2 pi)) - sum mean^2/(2 sd^2) + <sq, -1/(2 sd^2)> + <lin, mean/sd^2>."""
    sq, lin = np.asarray(sq), np.asarray(lin)
    mean = np.broadcast_to(mean, lin.shape)
    n = lin.size
    return float(-n * (np.log(sd) + LOG_SQRT_2PI) - np.sum(mean ** 2) / (2 * sd ** 2)
                 - np.sum(sq) / (2 * sd ** 2) + np.sum(lin * mean) / sd ** 2)


def log_likelihood_from_statistics(stats: SufficientStatistics, fe: FixedEffects,
                                   hyper: Hyperparameters) -> float:
    """Complete-data log-likelihood rebuilt as -Phi(theta) + <S, f(theta)> + A."""
    sigma = fe.sigma_noise
    n_obs = stats.s1.shape[0]
    longitudinal = float(-n_obs * np.sum(np.log(sigma) + LOG_SQRT_2PI)
                         - np.sum((stats.s1 - 2 * stats.s2 + stats.s3) / (2 * sigma ** 2)))
    mean = LatentFixedEffects.from_fixed(fe)
    total = longitudinal + stats.survival
    total += _gaussian_family(stats.s4, stats.s5, mean.log_v0, hyper.sigma_v0)
    total += _gaussian_family(stats.s6, stats.s7, mean.log_g, hyper.sigma_g)
    total += _gaussian_family(stats.s8, stats.s9, mean.beta, hyper.sigma_beta)
    total += _gaussian_family(stats.s10, stats.s11, mean.neg_log_nu, hyper.sigma_nu)
    total += _gaussian_family(stats.s12, stats.s13, mean.log_rho, hyper.sigma_rho)
    total += _gaussian_family(stats.s14, stats.s15, mean.zeta, hyper.sigma_zeta)
    total += _gaussian_family(stats.s16, stats.s17, fe.t0, fe.sigma_tau)
    total += _gaussian_family(stats.s18, stats.s19, 0.0, fe.sigma_xi)
    total += _gaussian_family(stats.s20, stats.s21, 0.0, 1.0)
    return total
