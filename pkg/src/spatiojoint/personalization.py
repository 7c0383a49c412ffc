"""Random effects of new patients under frozen population parameters, and
the predictions built on them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BarrierError, ValidationError
from .likelihood import jacobian_random_effects, longitudinal_terms, model_values, re_prior_terms, survival_terms
from .model import (
    Dataset,
    FixedEffects,
    Geometry,
    Hyperparameters,
    LatentFixedEffects,
    PatientRecord,
    RandomEffects,
    cif,
    individual_trajectory,
    overall_survival,
)
from .optim import bfgs


@dataclass
class Personalization:
    random_effects: RandomEffects
    objective: float
    start_objectives: np.ndarray
    converged: bool


class _Objective:
    """Negative complete log-likelihood of one patient in standardised coordinates
    p = (xi / sigma_xi, (tau - t0) / sigma_tau, s)."""

    def __init__(self, patient: PatientRecord, fe: FixedEffects, geometry: Geometry, fix_sources: bool):
        self.patient = patient
        self.fe = fe
        self.geometry = geometry
        self.flat = Dataset([patient], n_outcomes=fe.n_outcomes).flat()
        self.fix_sources = fix_sources
        self.Ns = fe.n_sources

    def random_effects(self, p) -> RandomEffects:
        fe = self.fe
        s = np.zeros(self.Ns) if self.fix_sources else np.asarray(p[2:], dtype=float)
        return RandomEffects(p[0] * fe.sigma_xi, fe.t0 + p[1] * fe.sigma_tau, s)

    def to_standard(self, re: RandomEffects) -> np.ndarray:
        fe = self.fe
        head = [float(re.xi) / fe.sigma_xi, (float(re.tau) - fe.t0) / fe.sigma_tau]
        return np.array(head if self.fix_sources else head + list(np.ravel(re.sources)))

    def value(self, p) -> float:
        re = self.random_effects(p)
        cohort = RandomEffects(np.atleast_1d(re.xi), np.atleast_1d(re.tau), np.atleast_2d(re.sources))
        surv = survival_terms(self.flat, self.fe, cohort)[0]
        if not np.isfinite(surv):
            return np.inf
        gamma = model_values(self.flat, self.fe, self.geometry, cohort)
        total = longitudinal_terms(self.flat, self.fe, gamma).sum() + surv + re_prior_terms(cohort, self.fe)[0]
        return float(-total)

    def __call__(self, p):
        with np.errstate(over="ignore", invalid="ignore"):
            f = self.value(p)
            if not np.isfinite(f):
                return np.inf, np.zeros_like(p)
            re = self.random_effects(p)
            parts = jacobian_random_effects(self.patient, self.fe, re, self.geometry, scaled=True)
        g = parts["longitudinal"] + parts["survival"] + parts["prior"]
        grad = np.array([g.xi, g.tau] if self.fix_sources else [g.xi, g.tau, *g.sources], dtype=float)
        if not np.all(np.isfinite(grad)):
            return np.inf, np.zeros_like(p)
        return f, -grad


def _feasible_start(p, objective: _Objective):
    """Pull tau before an observed event so that the start has finite objective."""
    pat, fe = objective.patient, objective.fe
    if pat.event_code > 0:
        latest = (pat.event_time - 0.1 * fe.sigma_tau - fe.t0) / fe.sigma_tau
        p = p.copy()
        p[1] = min(p[1], latest)
    return p


def personalize_detailed(patient: PatientRecord, fe: FixedEffects, z_fe: LatentFixedEffects | None = None,
                         geometry: Geometry | None = None, hyper: Hyperparameters | None = None,
                         n_starts: int = 5, jitter: float = 0.5, seed=0,
                         fix_sources: bool = False) -> Personalization:
    """MAP random effects of ``patient`` with the population parameters frozen.

    ``fe`` carries the population means (t0, sigma_tau, sigma_xi, noise);
    ``z_fe`` the latent fixed effects (defaults to their means). Starts are
    the prior mean plus ``n_starts - 1`` jittered copies (SD ``jitter`` in
    standardised units).
    """
    if hyper is not None and hyper.n_sources != fe.n_sources:
        raise ValidationError("hyperparameters and parameters disagree on the number of sources")
    eff = fe.with_latent(z_fe) if z_fe is not None else fe
    geometry = geometry or Geometry.from_effects(eff)
    objective = _Objective(patient, eff, geometry, fix_sources)
    rng = np.random.default_rng(seed)
    dim = 2 if fix_sources else 2 + fe.n_sources
    starts = [np.zeros(dim)] + [jitter * rng.standard_normal(dim) for _ in range(n_starts - 1)]
    starts = [_feasible_start(p, objective) for p in starts]
    start_values = np.array([objective.value(p) for p in starts])
    best = None
    for p0, f0 in zip(starts, start_values):
        if not np.isfinite(f0):
            continue
        res = bfgs(objective, p0)
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise BarrierError(
            f"patient {patient.id}: every start violates the barrier tau < event time "
            f"({patient.event_time}) for the observed event"
        )
    return Personalization(objective.random_effects(best.x), -best.fun, -start_values, best.converged)


def personalize(patient: PatientRecord, fe: FixedEffects, z_fe: LatentFixedEffects | None = None,
                geometry: Geometry | None = None, hyper: Hyperparameters | None = None,
                **kwargs) -> RandomEffects:
    return personalize_detailed(patient, fe, z_fe, geometry, hyper, **kwargs).random_effects


def predict_longitudinal(re: RandomEffects, fe: FixedEffects, geometry: Geometry | None, times) -> np.ndarray:
    """Predicted outcome values, shape (len(times), K)."""
    geometry = geometry or Geometry.from_effects(fe)
    return individual_trajectory(fe, re, geometry, None, np.asarray(times, dtype=float))


def predict_event(re: RandomEffects, fe: FixedEffects, z_fe: LatentFixedEffects | None,
                  geometry: Geometry | None, l: int, t, t_last: float) -> float:
    """P(event ``l`` in (t_last, t] | event-free at t_last); ``l`` is 0-based."""
    eff = fe.with_latent(z_fe) if z_fe is not None else fe
    if t < t_last:
        raise ValidationError(f"horizon {t} precedes the conditioning time {t_last}")
    if t == t_last:
        return 0.0
    u = eff.zeta @ np.asarray(re.sources, dtype=float)
    at_risk = float(overall_survival(eff, re, u, t_last))
    if at_risk <= 0:
        return 0.0
    value = (cif(eff, re, u, l, t) - cif(eff, re, u, l, t_last)) / at_risk
    return float(np.clip(value, 0.0, 1.0))
