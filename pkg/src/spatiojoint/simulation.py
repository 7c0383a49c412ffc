"""Synthetic cohorts generated under the joint model.

``real-like`` cohorts share one set of random effects between the
longitudinal and survival processes; ``no-link`` cohorts draw an
independent set for the event times.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .model import (
    Dataset,
    FixedEffects,
    Geometry,
    PatientRecord,
    RandomEffects,
    individual_trajectory,
    orthonormal_basis,
)

LINK_MODES = ("real-like", "no-link")
MONTH = 1.0 / 12.0

# real-like column of the simulation-parameter table: one row per source direction
PAPER_MIXING_DIRECTIONS = [[0.06, -0.10, 0.00, 0.01], [0.06, 0.006, -0.14, -0.00]]


@dataclass
class SimulationConfig:
    fixed_effects: FixedEffects
    n_patients: int = 300
    baseline_offset_mean: float = 0.0
    baseline_offset_sd: float = 0.4
    followup_mean: float = 1.1
    followup_sd: float = 0.5
    visit_gap_mean: float = 2.0 * MONTH
    visit_gap_sd: float = 0.75 * MONTH
    padding_interval: float = 1.5 * MONTH
    min_visit_gap: float = 1.0 / 52.0
    noise_clamp: float = 1e-6
    link_mode: str = "real-like"
    seed: int = 0
    # event times ignore the survival shift unless this is set
    event_survival_shift: bool = False

    def validate(self) -> None:
        self.fixed_effects.validate(allow_zero_noise=True)
        if self.n_patients < 1:
            raise ValidationError("n_patients must be positive")
        for name in ("baseline_offset_sd", "followup_sd", "visit_gap_sd"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be strictly positive")
        if not self.padding_interval > 0:
            raise ValidationError("padding_interval must be strictly positive")
        if not self.min_visit_gap > 0 or not self.visit_gap_mean > 0:
            raise ValidationError("visit gaps must be strictly positive")
        if self.link_mode not in LINK_MODES:
            raise ValidationError(f"link_mode must be one of {LINK_MODES}")


def mixing_to_beta(v0, mixing) -> np.ndarray:
    """Coefficients of the projection of ``mixing`` (K x Ns) on the basis orthogonal to v0."""
    return orthonormal_basis(v0).T @ np.asarray(mixing, dtype=float)


def paper_fixed_effects(sigma_tau: float = 1.0) -> FixedEffects:
    v0 = np.array([0.069, 0.188, 0.198, 0.112])
    return FixedEffects(
        t0=5.0,
        sigma_tau=sigma_tau,
        sigma_xi=0.790,
        g=np.array([13.958, 5.316, 3.993, 5.704]),
        v0=v0,
        sigma_noise=np.array([0.066, 0.102, 0.102, 0.046]),
        nu=np.array([2.8, 3.6]),
        rho=np.array([1.7, 2.8]),
        beta=mixing_to_beta(v0, np.array(PAPER_MIXING_DIRECTIONS).T),
        zeta=np.array([[-0.09, 0.09], [-0.1, 0.0]]),
    )


def paper_config(link_mode: str = "real-like", seed: int = 0, n_patients: int = 300,
                 sigma_tau: float = 1.0) -> SimulationConfig:
    """The real-like / no-link scenario of the published simulation study."""
    return SimulationConfig(fixed_effects=paper_fixed_effects(sigma_tau), n_patients=n_patients,
                            link_mode=link_mode, seed=seed)


def sample_event_times(rng: np.random.Generator, xi, tau, u, nu, rho, size=None):
    """Inverse-CDF draws of T = tau + e^-xi * Weibull(nu * exp(-u/rho), rho)."""
    uni = rng.random(size if size is not None else np.broadcast(xi, tau, u, nu, rho).shape)
    elapsed = nu * (-np.log1p(-uni) * np.exp(-np.asarray(u))) ** (1.0 / np.asarray(rho))
    return tau + np.exp(-np.asarray(xi)) * elapsed


@dataclass
class SimulatedCohort:
    dataset: Dataset
    truth: RandomEffects
    config: SimulationConfig
    survival_truth: RandomEffects | None = field(default=None)


def _visit_schedule(rng, cfg, baseline):
    followup = cfg.followup_mean + cfg.followup_sd * rng.standard_normal()
    end = baseline + followup
    visits = [baseline]
    while True:
        gap = max(cfg.visit_gap_mean + cfg.visit_gap_sd * rng.standard_normal(), cfg.min_visit_gap)
        if visits[-1] + gap > end:
            return np.array(visits)
        visits.append(visits[-1] + gap)


def _simulate_patient(rng, cfg: SimulationConfig, geometry: Geometry):
    fe = cfg.fixed_effects
    Ns, L = fe.n_sources, fe.n_events
    xi = fe.sigma_xi * rng.standard_normal()
    tau = fe.t0 + fe.sigma_tau * rng.standard_normal()
    sources = rng.standard_normal(Ns)
    baseline = tau + cfg.baseline_offset_mean + cfg.baseline_offset_sd * rng.standard_normal()
    visits = _visit_schedule(rng, cfg, baseline)

    if cfg.link_mode == "no-link":
        ev_xi = fe.sigma_xi * rng.standard_normal()
        ev_tau = fe.t0 + fe.sigma_tau * rng.standard_normal()
        ev_sources = rng.standard_normal(Ns)
    else:
        ev_xi, ev_tau, ev_sources = xi, tau, sources
    u = fe.zeta @ ev_sources if cfg.event_survival_shift else np.zeros(L)
    event_times = sample_event_times(rng, ev_xi, ev_tau, u, fe.nu, fe.rho, size=L)

    first = int(np.argmin(event_times))
    t_first = float(event_times[first])
    if t_first <= visits[-1]:
        # the event ends follow-up; a visit at the event time is kept
        visits = visits[visits <= t_first]
        event_time, event_code = t_first, first + 1
    else:
        event_time, event_code = float(visits[-1]), 0

    if visits.size < 2:
        anchor = visits[0] if visits.size else event_time
        pad = anchor - cfg.padding_interval * np.arange(2 - visits.size, 0, -1)
        visits = np.concatenate([pad, visits])

    re = RandomEffects(xi, tau, sources)
    gamma = individual_trajectory(fe, re, geometry, None, visits)
    noisy = gamma + fe.sigma_noise * rng.standard_normal(gamma.shape)
    eps = cfg.noise_clamp
    values = np.clip(noisy, eps, 1.0 - eps)
    ev_re = RandomEffects(ev_xi, ev_tau, ev_sources)
    return visits, values, event_time, event_code, re, ev_re


def simulate_dataset(config: SimulationConfig) -> SimulatedCohort:
    """Simulate a cohort; per-patient RNG substreams make it reproducible from the seed."""
    config.validate()
    fe = config.fixed_effects
    geometry = Geometry.from_effects(fe)
    streams = np.random.SeedSequence(config.seed).spawn(config.n_patients)
    patients, truths, ev_truths = [], [], []
    width = max(4, len(str(config.n_patients - 1)))
    for i, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        visits, values, t_e, code, re, ev_re = _simulate_patient(rng, config, geometry)
        patients.append(PatientRecord(f"P{i:0{width}d}", visits, values, t_e, code))
        truths.append(re)
        ev_truths.append(ev_re)
    truth = RandomEffects(
        np.array([r.xi for r in truths]),
        np.array([r.tau for r in truths]),
        np.array([r.sources for r in truths]),
    )
    survival_truth = None
    if config.link_mode == "no-link":
        survival_truth = RandomEffects(
            np.array([r.xi for r in ev_truths]),
            np.array([r.tau for r in ev_truths]),
            np.array([r.sources for r in ev_truths]),
        )
    dataset = Dataset(patients, n_outcomes=fe.n_outcomes)
    return SimulatedCohort(dataset, truth, config, survival_truth)


def dataset_summary(dataset: Dataset, n_events: int | None = None) -> dict:
    """Cohort characteristics: counts, follow-up, visit spacing, events and baseline values."""
    n_events = n_events if n_events is not None else dataset.n_events
    counts = np.array([p.n_visits for p in dataset.patients])
    followup = np.array([p.times[-1] - p.times[0] if p.n_visits else 0.0 for p in dataset.patients])
    gaps = np.concatenate([np.diff(p.times) for p in dataset.patients]) / MONTH
    codes = np.array([p.event_code for p in dataset.patients])
    baseline = np.array([p.values[0] for p in dataset.patients if p.n_visits])
    N = dataset.n_patients
    out = {
        "n_patients": N,
        "n_visits": int(counts.sum()),
        "patient_years": float(followup.sum()),
        "visits_per_patient_mean": float(counts.mean()),
        "visits_per_patient_sd": float(counts.std(ddof=1)) if N > 1 else 0.0,
        "followup_years_mean": float(followup.mean()),
        "followup_years_sd": float(followup.std(ddof=1)) if N > 1 else 0.0,
        "visit_gap_months_mean": float(gaps.mean()) if gaps.size else float("nan"),
        "visit_gap_months_sd": float(gaps.std(ddof=1)) if gaps.size > 1 else float("nan"),
    }
    for l in range(1, n_events + 1):
        out[f"event_{l}_count"] = int(np.sum(codes == l))
        out[f"event_{l}_fraction"] = float(np.mean(codes == l))
    for k in range(dataset.n_outcomes):
        out[f"baseline_y{k}_mean"] = float(baseline[:, k].mean())
        out[f"baseline_y{k}_sd"] = float(baseline[:, k].std(ddof=1)) if len(baseline) > 1 else 0.0
    return out
