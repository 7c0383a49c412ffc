"""MCMC-SAEM estimation of the joint model.

Each iteration runs one Metropolis-Hastings sweep over the latent variables
(population latents coordinate by coordinate, then the individual random
effects, all patients in parallel), computes the sufficient statistics,
updates their stochastic approximation and maximises in closed form.
The returned parameters are the uniform average of the last
``n_robbins_monro`` iterates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .aft import fit_weibull
from .errors import NumericalError, ValidationError
from .likelihood import (
    SufficientStatistics,
    fe_priors,
    longitudinal_terms,
    model_values,
    re_prior_terms,
    sufficient_statistics,
    survival_terms,
)
from .model import Dataset, FixedEffects, Geometry, Hyperparameters, LatentFixedEffects, RandomEffects

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-12


@dataclass
class SaemSettings:
    n_iterations: int = 10_000
    n_burnin: int | None = None
    n_robbins_monro: int | None = None
    sa_decay_exponent: float = 0.65
    target_acceptance: float = 0.3
    adaptation_interval: int = 50
    adaptation_factor: float = 1.1
    proposal_scale: float = 1.0
    n_posterior: int = 100
    se_window: int = 1000
    max_infeasible: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.n_burnin is None:
            self.n_burnin = self.n_iterations // 2
        if self.n_robbins_monro is None:
            self.n_robbins_monro = max(1, self.n_iterations // 5)
        self.validate()

    def validate(self) -> None:
        if self.n_iterations < 1:
            raise ValidationError("n_iterations must be positive")
        if self.n_burnin < 0 or self.n_robbins_monro < 1:
            raise ValidationError("n_burnin must be >= 0 and n_robbins_monro >= 1")
        if self.n_burnin + self.n_robbins_monro > self.n_iterations:
            raise ValidationError("n_burnin + n_robbins_monro must not exceed n_iterations")
        if not 0.5 < self.sa_decay_exponent <= 1.0:
            raise ValidationError("sa_decay_exponent must lie in (0.5, 1]")
        if not 0 < self.target_acceptance < 1:
            raise ValidationError("target_acceptance must lie in (0, 1)")
        if self.adaptation_interval < 1 or self.adaptation_factor <= 1.0:
            raise ValidationError("adaptation_interval >= 1 and adaptation_factor > 1 required")
        if self.proposal_scale < 0:
            raise ValidationError("proposal_scale must be non-negative")


# --- parameter vectors ---------------------------------------------------------


def theta_names(K: int, L: int, Ns: int) -> list[str]:
    names = ["t0", "sigma_tau", "sigma_xi"]
    names += [f"g_{k}" for k in range(K)]
    names += [f"v0_{k}" for k in range(K)]
    names += [f"sigma_{k}" for k in range(K)]
    names += [f"nu_{l}" for l in range(L)]
    names += [f"rho_{l}" for l in range(L)]
    names += [f"beta_{o}_{m}" for o in range(K - 1) for m in range(Ns)]
    names += [f"zeta_{l}_{m}" for l in range(L) for m in range(Ns)]
    return names


def theta_vector(fe: FixedEffects) -> np.ndarray:
    return np.concatenate([[fe.t0, fe.sigma_tau, fe.sigma_xi], fe.g, fe.v0, fe.sigma_noise,
                           fe.nu, fe.rho, fe.beta.ravel(), fe.zeta.ravel()])


def theta_from_vector(vec, K: int, L: int, Ns: int) -> FixedEffects:
    vec = np.asarray(vec, dtype=float)
    pos = 3

    def take(n):
        nonlocal pos
        out = vec[pos:pos + n]
        pos += n
        return out

    g, v0, sigma = take(K), take(K), take(K)
    nu, rho = take(L), take(L)
    beta = take((K - 1) * Ns).reshape(K - 1, Ns)
    zeta = take(L * Ns).reshape(L, Ns)
    return FixedEffects(vec[0], vec[1], vec[2], g, v0, sigma, nu, rho, beta, zeta)


# --- initialisation -----------------------------------------------------------


def _feasible_tau(flat, tau):
    """Move tau before the first visit / event wherever an observed event would
    otherwise sit at or before it."""
    tau = tau.copy()
    obs = flat["event_code"] > 0
    bad = obs & (flat["event_time"] <= tau)
    if np.any(bad):
        first_visit = np.full(tau.shape, np.inf)
        has = flat["counts"] > 0
        first_visit[has] = flat["times"][flat["starts"][has]]
        tau[bad] = np.minimum(first_visit[bad], flat["event_time"][bad]) - 0.1
    return tau


def _heuristic_fixed_effects(dataset: Dataset, hyper: Hyperparameters) -> FixedEffects:
    flat = dataset.flat()
    K, L, Ns = hyper.n_outcomes, hyper.n_events, hyper.n_sources
    t0 = float(flat["times"].mean())
    baseline = flat["values"][flat["starts"]]
    p = np.clip(baseline.mean(axis=0), 1e-3, 1 - 1e-3)
    g = (1.0 - p) / p
    slopes = []
    for pat in dataset.patients:
        t = pat.times - pat.times.mean()
        denom = np.sum(t ** 2)
        if denom > 0:
            slopes.append((t @ (pat.values - pat.values.mean(axis=0))) / denom)
    v0 = np.maximum(np.mean(slopes, axis=0), 1e-4)
    mean_times = np.array([pat.times.mean() for pat in dataset.patients])
    sigma_tau = max(float(mean_times.std()), 0.1)
    sigma_noise = np.maximum(flat["values"].std(axis=0), 1e-3)

    tau0 = _feasible_tau(flat, np.full(dataset.n_patients, t0))
    elapsed = flat["event_time"] - tau0
    keep = elapsed > 0
    # a cause without events has an unbounded scale MLE; start far beyond follow-up
    nu = np.full(L, 10.0 * max(float(elapsed[keep].max(initial=0.0)), 1.0))
    rho = np.ones(L)
    for l in range(1, L + 1):
        observed = flat["event_code"][keep] == l
        if observed.any():
            wf = fit_weibull(elapsed[keep], observed)
            nu[l - 1], rho[l - 1] = wf.nu, wf.rho
    return FixedEffects(t0=t0, sigma_tau=sigma_tau, sigma_xi=0.5, g=g, v0=v0,
                        sigma_noise=sigma_noise, nu=nu, rho=rho,
                        beta=np.zeros((K - 1, Ns)), zeta=np.zeros((L, Ns)))


def initialize(dataset: Dataset, hyper: Hyperparameters, init_mode: str = "heuristic",
               params: FixedEffects | None = None):
    """Starting point (theta, z_fe, re_all) of the chain.

    ``heuristic`` derives theta from simple data summaries and per-cause
    Weibull fits; ``warm`` starts from ``params``. Random effects start at
    their prior means, with tau moved before observed events where needed.
    """
    dataset.require_min_visits(2)
    if dataset.n_outcomes != hyper.n_outcomes:
        raise ValidationError(f"data has {dataset.n_outcomes} outcomes, hyperparameters say {hyper.n_outcomes}")
    if dataset.n_events > hyper.n_events:
        raise ValidationError(f"data has event code {dataset.n_events} > n_events={hyper.n_events}")
    if init_mode == "warm":
        if params is None:
            raise ValidationError("warm initialisation needs a parameter set")
        theta = params
        if (theta.n_outcomes, theta.n_events, theta.n_sources) != (hyper.n_outcomes, hyper.n_events, hyper.n_sources):
            raise ValidationError("warm-start parameters do not match the hyperparameter sizes")
    elif init_mode == "heuristic":
        theta = _heuristic_fixed_effects(dataset, hyper)
    else:
        raise ValidationError(f"unknown init_mode {init_mode!r}")
    theta.validate()
    N = dataset.n_patients
    flat = dataset.flat()
    re = RandomEffects(np.zeros(N), _feasible_tau(flat, np.full(N, theta.t0)),
                       np.zeros((N, hyper.n_sources)))
    return theta, LatentFixedEffects.from_fixed(theta), re


# --- stochastic approximation and maximisation ---------------------------------


def step_size(iteration: int, settings: SaemSettings) -> float:
    if iteration <= settings.n_burnin:
        return 1.0
    return float((iteration - settings.n_burnin) ** (-settings.sa_decay_exponent))


def sa_update(stats_accum: SufficientStatistics | None, stats_new: SufficientStatistics,
              iteration: int, settings: SaemSettings) -> SufficientStatistics:
    eps = step_size(iteration, settings)
    if stats_accum is None or eps == 1.0:
        return stats_new.copy()
    out = {}
    for name, acc in stats_accum.items():
        new = getattr(stats_new, name)
        out[name] = acc + eps * (new - acc)
    return SufficientStatistics(**out)


def maximization_step(stats: SufficientStatistics, counts=None, floor: float = VARIANCE_FLOOR):
    """Closed-form update of theta from accumulated statistics.

    Returns ``(theta, n_floored)``; ``n_floored`` counts variances that had
    to be floored.
    """
    n_floored = 0

    def floored(v):
        nonlocal n_floored
        v = np.asarray(v, dtype=float)
        low = v < floor
        n_floored += int(np.sum(low))
        return np.where(low, floor, v)

    n_obs = np.asarray(counts if counts is not None else np.full(stats.s1.shape[1], stats.s1.shape[0]))
    resid = (stats.s1 - 2.0 * stats.s2 + stats.s3).sum(axis=0)
    sigma_noise = np.sqrt(floored(resid / n_obs))
    tau_bar = float(np.mean(stats.s17))
    var_tau = floored(np.mean(stats.s16) - 2 * tau_bar * np.mean(stats.s17) + tau_bar ** 2)
    xi_bar = float(np.mean(stats.s19))
    var_xi = floored(np.mean(stats.s18) - 2 * xi_bar * np.mean(stats.s19) + xi_bar ** 2)
    if n_floored:
        log.warning("floored %d variance estimate(s) at %g", n_floored, floor)
    # xi mean is re-centred to 0 and t0 tied to the mean of tau
    theta = FixedEffects(
        t0=tau_bar,
        sigma_tau=float(np.sqrt(var_tau)),
        sigma_xi=float(np.sqrt(var_xi)),
        g=np.exp(stats.s7),
        v0=np.exp(stats.s5),
        sigma_noise=sigma_noise,
        nu=np.exp(-stats.s11),
        rho=np.exp(stats.s13),
        beta=np.array(stats.s9, dtype=float),
        zeta=np.array(stats.s15, dtype=float),
    )
    return theta, n_floored


def posterior_se(traces, window: int, end: int | None = None) -> np.ndarray:
    """Standard deviation of each trace column over ``window`` rows ending at ``end``."""
    traces = np.asarray(traces, dtype=float)
    end = traces.shape[0] if end is None else end
    start = max(0, end - window)
    chunk = traces[start:end]
    if chunk.shape[0] < 2:
        return np.zeros(traces.shape[1])
    return chunk.std(axis=0, ddof=1)


# --- the Markov chain ----------------------------------------------------------

_POPULATION_FIELDS = (
    # (latent field, hyperparameter scale, theta-mean attribute, affects longitudinal, affects survival)
    ("log_g", "sigma_g", True, False),
    ("log_v0", "sigma_v0", True, False),
    ("beta", "sigma_beta", True, False),
    ("neg_log_nu", "sigma_nu", False, True),
    ("log_rho", "sigma_rho", False, True),
    ("zeta", "sigma_zeta", False, True),
)


class MarkovChain:
    """Block Metropolis-Hastings sampler over (z_fe, re) at fixed theta."""

    def __init__(self, dataset: Dataset, hyper: Hyperparameters, theta: FixedEffects,
                 z: LatentFixedEffects, re: RandomEffects, settings: SaemSettings,
                 rng: np.random.Generator):
        self.dataset = dataset
        self.flat = dataset.flat()
        self.hyper = hyper
        self.theta = theta
        self.z = z.copy()
        self.re = re.copy()
        self.settings = settings
        self.rng = rng
        N = dataset.n_patients
        scale = settings.proposal_scale
        self.sd = {
            "xi": np.full(N, 0.1 * scale),
            "tau": np.full(N, 0.5 * scale),
            "sources": np.full((N, hyper.n_sources), 0.5 * scale),
            "age_pivot": np.full(N, 0.1 * scale),
        }
        for name, hyper_name, _, _ in _POPULATION_FIELDS:
            self.sd[name] = np.full(getattr(z, name).shape, getattr(hyper, hyper_name) * scale)
        self.sd["speed_shift"] = np.full(1, 0.2 * hyper.sigma_v0 * scale)
        self.sd["reference_shift"] = np.full(1, 0.2 * hyper.sigma_g * scale)
        self.accepted = {k: np.zeros_like(v) for k, v in self.sd.items()}
        counts = self.flat["counts"]
        visit_sums = np.bincount(self.flat["patient"], self.flat["times"], minlength=N)
        self.anchor = np.where(counts > 0, visit_sums / np.maximum(counts, 1), self.flat["event_time"])
        self.last_acceptance = {}
        self.refresh()

    # state caches
    def refresh(self) -> None:
        self.eff = self.theta.with_latent(self.z)
        self.geometry = Geometry.from_effects(self.eff)
        self.gamma = model_values(self.flat, self.eff, self.geometry, self.re)
        self.long = longitudinal_terms(self.flat, self.eff, self.gamma).sum(axis=1)
        self.surv = survival_terms(self.flat, self.eff, self.re)

    def set_theta(self, theta: FixedEffects) -> None:
        # curves do not depend on theta (only on latents), only the noise does
        self.theta = theta
        self.eff = theta.with_latent(self.z)
        self.long = longitudinal_terms(self.flat, self.eff, self.gamma).sum(axis=1)

    def log_likelihood(self) -> float:
        fe_long, fe_surv = fe_priors(self.z, self.theta, self.hyper)
        return float(self.long.sum() + self.surv.sum() + re_prior_terms(self.re, self.theta).sum()
                     + fe_long + fe_surv)

    # individual blocks
    def _prior_component(self, name, values, m=None):
        th = self.theta
        if name == "xi":
            return -0.5 * (values / th.sigma_xi) ** 2
        if name == "tau":
            return -0.5 * ((values - th.t0) / th.sigma_tau) ** 2
        return -0.5 * values ** 2

    def _individual_block(self, name: str, m: int | None = None) -> float:
        re = self.re
        N = len(re)
        if name == "sources":
            current = re.sources[:, m]
            sd = self.sd["sources"][:, m]
        else:
            current = getattr(re, name)
            sd = self.sd[name]
        proposal = current + sd * self.rng.standard_normal(N)
        if name == "xi":
            new_re = RandomEffects(proposal, re.tau, re.sources)
        elif name == "tau":
            new_re = RandomEffects(re.xi, proposal, re.sources)
        else:
            sources = re.sources.copy()
            sources[:, m] = proposal
            new_re = RandomEffects(re.xi, re.tau, sources)
        gamma = model_values(self.flat, self.eff, self.geometry, new_re)
        long = longitudinal_terms(self.flat, self.eff, gamma).sum(axis=1)
        surv = survival_terms(self.flat, self.eff, new_re)
        log_ratio = (long + surv - self.long - self.surv
                     + self._prior_component(name, proposal) - self._prior_component(name, current))
        with np.errstate(invalid="ignore"):
            accept = np.log(self.rng.random(N)) < log_ratio
        if np.any(accept):
            current[accept] = proposal[accept]
            rows = accept[self.flat["patient"]]
            self.gamma[rows] = gamma[rows]
            self.long[accept] = long[accept]
            self.surv[accept] = surv[accept]
        if name == "sources":
            self.accepted["sources"][:, m] += accept
        else:
            self.accepted[name] += accept
        return float(accept.mean())

    def _age_pivot_block(self) -> float:
        """Joint (xi_i, tau_i) move that keeps the latent age at the patient's mean
        visit time fixed: xi + d, tau -> anchor - e^-d (anchor - tau).

        Sparse patients only pin psi near their visits, so their (xi, tau)
        posterior is a narrow curved ridge that single-coordinate steps cross
        slowly. The map has Jacobian e^-d.
        """
        re = self.re
        N = len(re)
        delta = self.sd["age_pivot"] * self.rng.standard_normal(N)
        xi = re.xi + delta
        tau = self.anchor - np.exp(-delta) * (self.anchor - re.tau)
        new_re = RandomEffects(xi, tau, re.sources)
        gamma = model_values(self.flat, self.eff, self.geometry, new_re)
        long = longitudinal_terms(self.flat, self.eff, gamma).sum(axis=1)
        surv = survival_terms(self.flat, self.eff, new_re)
        log_ratio = (long + surv - self.long - self.surv - delta
                     + self._prior_component("xi", xi) - self._prior_component("xi", re.xi)
                     + self._prior_component("tau", tau) - self._prior_component("tau", re.tau))
        with np.errstate(invalid="ignore"):
            accept = np.log(self.rng.random(N)) < log_ratio
        if np.any(accept):
            re.xi[accept] = xi[accept]
            re.tau[accept] = tau[accept]
            rows = accept[self.flat["patient"]]
            self.gamma[rows] = gamma[rows]
            self.long[accept] = long[accept]
            self.surv[accept] = surv[accept]
        self.accepted["age_pivot"] += accept
        return float(accept.mean())

    # population blocks
    def _population_block(self, name: str, hyper_name: str, affects_long: bool,
                          affects_surv: bool) -> float:
        values = getattr(self.z, name)
        means = getattr(LatentFixedEffects.from_fixed(self.theta), name)
        prior_sd = getattr(self.hyper, hyper_name)
        sd = self.sd[name]
        n_acc = 0
        for index in np.ndindex(values.shape):
            if sd[index] == 0:
                n_acc += 1
                self.accepted[name][index] += 1
                continue
            old = values[index]
            new = old + sd[index] * self.rng.standard_normal()
            z_new = self.z.copy()
            getattr(z_new, name)[index] = new
            eff = self.theta.with_latent(z_new)
            log_ratio = -0.5 * (((new - means[index]) / prior_sd) ** 2 - ((old - means[index]) / prior_sd) ** 2)
            geometry, gamma, long, surv = self.geometry, self.gamma, self.long, self.surv
            if affects_long:
                if name != "log_g":
                    geometry = Geometry.from_effects(eff)
                gamma = model_values(self.flat, eff, geometry, self.re)
                long = longitudinal_terms(self.flat, eff, gamma).sum(axis=1)
                log_ratio += long.sum() - self.long.sum()
            if affects_surv:
                surv = survival_terms(self.flat, eff, self.re)
                log_ratio += surv.sum() - self.surv.sum()
            if np.log(self.rng.random()) < log_ratio:
                self.z, self.eff, self.geometry = z_new, eff, geometry
                self.gamma, self.long, self.surv = gamma, long, surv
                self.accepted[name][index] += 1
                n_acc += 1
        return n_acc / values.size

    def _speed_shift_block(self) -> float:
        """Collective move along the direction that leaves both attachments unchanged:
        xi_i + c for every patient, log v0 - c and nu * e^c. Only the priors of
        xi and of the latent v0 and nu enter the acceptance ratio."""
        sd = self.sd["speed_shift"][0]
        if sd == 0:
            self.accepted["speed_shift"] += 1
            return 1.0
        c = sd * self.rng.standard_normal()
        th, hyper = self.theta, self.hyper
        mean = LatentFixedEffects.from_fixed(th)
        xi = self.re.xi
        log_ratio = -0.5 * np.sum((xi + c) ** 2 - xi ** 2) / th.sigma_xi ** 2
        dv = self.z.log_v0 - mean.log_v0
        log_ratio -= 0.5 * np.sum((dv - c) ** 2 - dv ** 2) / hyper.sigma_v0 ** 2
        dn = self.z.neg_log_nu - mean.neg_log_nu
        log_ratio -= 0.5 * np.sum((dn - c) ** 2 - dn ** 2) / hyper.sigma_nu ** 2
        if np.log(self.rng.random()) >= log_ratio:
            return 0.0
        z = self.z.copy()
        z.log_v0 -= c
        z.neg_log_nu -= c
        self.z = z
        self.re = RandomEffects(xi + c, self.re.tau, self.re.sources)
        self.eff = self.theta.with_latent(z)
        self.geometry = Geometry.from_effects(self.eff)
        self.accepted["speed_shift"] += 1
        return 1.0

    def _reference_shift_block(self) -> float:
        """Collective move sliding the reference point along the logistic curves.

        tau_i + d e^-xi_i for every patient, log g_k - b_k d and v0_k re-solved so
        that each logit slope b_k = v0_k (1 + g_k)^2 / g_k is unchanged. The map
        is a flow in d with unit Jacobian, so the full posterior ratio is the
        acceptance ratio. Noise-free curves without space shifts are left
        exactly unchanged; the space shifts and survival terms are not.
        """
        sd = self.sd["reference_shift"][0]
        if sd == 0:
            self.accepted["reference_shift"] += 1
            return 1.0
        d = sd * self.rng.standard_normal()
        th, hyper = self.theta, self.hyper
        z = self.z.copy()
        g = np.exp(z.log_g)
        slope = (1.0 + g) ** 2 / g * np.exp(z.log_v0)
        z.log_g = z.log_g - slope * d
        g_new = np.exp(z.log_g)
        z.log_v0 = np.log(slope) - np.log((1.0 + g_new) ** 2 / g_new)
        re = RandomEffects(self.re.xi, self.re.tau + d * np.exp(-self.re.xi), self.re.sources)
        eff = th.with_latent(z)
        geometry = Geometry.from_effects(eff)
        gamma = model_values(self.flat, eff, geometry, re)
        long = longitudinal_terms(self.flat, eff, gamma).sum(axis=1)
        surv = survival_terms(self.flat, eff, re)
        mean = LatentFixedEffects.from_fixed(th)
        log_ratio = long.sum() + surv.sum() - self.long.sum() - self.surv.sum()
        log_ratio -= 0.5 * np.sum((re.tau - th.t0) ** 2 - (self.re.tau - th.t0) ** 2) / th.sigma_tau ** 2
        for name, prior_sd in (("log_g", hyper.sigma_g), ("log_v0", hyper.sigma_v0)):
            new, old, m = getattr(z, name), getattr(self.z, name), getattr(mean, name)
            log_ratio -= 0.5 * np.sum((new - m) ** 2 - (old - m) ** 2) / prior_sd ** 2
        if not np.log(self.rng.random()) < log_ratio:
            return 0.0
        self.z, self.re, self.eff, self.geometry = z, re, eff, geometry
        self.gamma, self.long, self.surv = gamma, long, surv
        self.accepted["reference_shift"] += 1
        return 1.0

    def sweep(self) -> dict:
        rates = {}
        pop = [self._population_block(*spec) for spec in _POPULATION_FIELDS]
        sizes = [getattr(self.z, spec[0]).size for spec in _POPULATION_FIELDS]
        rates["population"] = float(np.average(pop, weights=sizes))
        rates["speed_shift"] = self._speed_shift_block()
        rates["reference_shift"] = self._reference_shift_block()
        rates["xi"] = self._individual_block("xi")
        rates["tau"] = self._individual_block("tau")
        rates["age_pivot"] = self._age_pivot_block()
        rates["sources"] = float(np.mean([self._individual_block("sources", m)
                                          for m in range(self.hyper.n_sources)]))
        self.last_acceptance = rates
        return rates

    def adapt(self) -> None:
        """Multiplicative adaptation of proposal scales toward the target acceptance."""
        interval = self.settings.adaptation_interval
        factor = self.settings.adaptation_factor
        target = self.settings.target_acceptance
        for name, count in self.accepted.items():
            rate = count / interval
            self.sd[name] = np.where(rate > target, self.sd[name] * factor, self.sd[name] / factor)
            self.accepted[name] = np.zeros_like(count)


# --- fit -------------------------------------------------------------------------


@dataclass
class FitResult:
    theta_hat: FixedEffects
    re_posterior_mean: RandomEffects
    space_shift_mean: np.ndarray
    survival_shift_mean: np.ndarray
    traces: np.ndarray
    trace_names: list
    acceptance: np.ndarray
    acceptance_names: list
    loglik_history: np.ndarray
    hyper: Hyperparameters
    settings: SaemSettings
    standard_errors: dict = field(default_factory=dict)
    patient_ids: list = field(default_factory=list)
    n_floored: int = 0

    @property
    def theta(self) -> FixedEffects:
        return self.theta_hat

    def trace_rows(self):
        for c in range(self.traces.shape[0]):
            yield [c + 1, *self.traces[c], *self.acceptance[c], self.loglik_history[c]]

    def trace_header(self) -> list:
        return ["iteration", *self.trace_names, *[f"acc_{n}" for n in self.acceptance_names], "loglik"]


def fit(dataset: Dataset, hyper: Hyperparameters, settings: SaemSettings | None = None,
        init_mode: str = "heuristic", params: FixedEffects | None = None,
        progress=None) -> FitResult:
    """Run MCMC-SAEM on ``dataset``.

    ``progress`` is an optional callable ``(iteration, theta, loglik)``
    invoked every 100 iterations.
    """
    settings = settings or SaemSettings()
    rng = np.random.default_rng(settings.seed)
    theta, z, re = initialize(dataset, hyper, init_mode, params)
    chain = MarkovChain(dataset, hyper, theta, z, re, settings, rng)
    K, L, Ns = hyper.n_outcomes, hyper.n_events, hyper.n_sources
    names = theta_names(K, L, Ns)
    n = settings.n_iterations
    traces = np.empty((n, len(names)))
    acc_names = ["population", "speed_shift", "reference_shift", "xi", "tau", "age_pivot", "sources"]
    acceptance = np.empty((n, len(acc_names)))
    loglik = np.empty(n)

    n_post = min(settings.n_posterior, n)
    N = dataset.n_patients
    sum_xi, sum_tau = np.zeros(N), np.zeros(N)
    sum_s, sum_w, sum_u = np.zeros((N, Ns)), np.zeros((N, K)), np.zeros((N, L))

    accum = None
    infeasible = 0
    n_floored = 0
    for c in range(1, n + 1):
        rates = chain.sweep()
        if c <= settings.n_burnin and c % settings.adaptation_interval == 0:
            chain.adapt()
        stats = sufficient_statistics(dataset, chain.z, chain.re, chain.theta, gamma=chain.gamma)
        accum = sa_update(accum, stats, c, settings)
        new_theta, nf = maximization_step(accum)
        n_floored += nf
        chain.set_theta(new_theta)

        ll = chain.log_likelihood()
        infeasible = infeasible + 1 if not np.isfinite(ll) else 0
        if infeasible >= settings.max_infeasible:
            raise NumericalError(f"log-likelihood infinite for {infeasible} consecutive iterations")
        traces[c - 1] = theta_vector(chain.theta)
        acceptance[c - 1] = [rates[k] for k in acc_names]
        loglik[c - 1] = ll
        if c > n - n_post:
            sum_xi += chain.re.xi
            sum_tau += chain.re.tau
            sum_s += chain.re.sources
            sum_w += chain.re.sources @ chain.geometry.mixing.T
            sum_u += chain.re.sources @ chain.eff.zeta.T
        if progress is not None and c % 100 == 0:
            progress(c, chain.theta, ll)

    theta_hat = theta_from_vector(traces[n - settings.n_robbins_monro:].mean(axis=0), K, L, Ns)
    se = posterior_se(traces, settings.se_window, end=n - settings.n_robbins_monro)
    return FitResult(
        theta_hat=theta_hat,
        re_posterior_mean=RandomEffects(sum_xi / n_post, sum_tau / n_post, sum_s / n_post),
        space_shift_mean=sum_w / n_post,
        survival_shift_mean=sum_u / n_post,
        traces=traces,
        trace_names=names,
        acceptance=acceptance,
        acceptance_names=acc_names,
        loglik_history=loglik,
        hyper=hyper,
        settings=settings,
        standard_errors=dict(zip(names, se)),
        patient_ids=[p.id for p in dataset.patients],
        n_floored=n_floored,
    )


def complete_log_likelihood(dataset: Dataset, result_theta: FixedEffects, re: RandomEffects,
                            hyper: Hyperparameters) -> float:
    """Complete-data log-likelihood with latent fixed effects at their means."""
    from .likelihood import total_log_likelihood

    z = LatentFixedEffects.from_fixed(result_theta)
    return total_log_likelihood(dataset, result_theta, z, re, None, hyper).total
