import dataclasses
import math

import numpy as np
import pytest

from spatiojoint.errors import ValidationError
from spatiojoint.model import Geometry, individual_trajectory
from spatiojoint.simulation import (
    SimulationConfig,
    dataset_summary,
    paper_config,
    paper_fixed_effects,
    sample_event_times,
    simulate_dataset,
)


@pytest.fixture(scope="module")
def cohorts():
    return [simulate_dataset(paper_config(seed=s)) for s in range(4)]


def test_seed_reproduces_dataset_bit_exactly():
    a = simulate_dataset(paper_config(seed=7, n_patients=40)).dataset
    b = simulate_dataset(paper_config(seed=7, n_patients=40)).dataset
    for p, q in zip(a.patients, b.patients):
        assert np.array_equal(p.times, q.times)
        assert np.array_equal(p.values, q.values)
        assert (p.event_time, p.event_code) == (q.event_time, q.event_code)


def test_different_seeds_differ():
    a = simulate_dataset(paper_config(seed=1, n_patients=10)).dataset
    b = simulate_dataset(paper_config(seed=2, n_patients=10)).dataset
    assert not np.array_equal(a.patients[0].values, b.patients[0].values)


def test_cohort_shape_matches_reference_table(cohorts):
    summaries = [dataset_summary(c.dataset) for c in cohorts]
    ev1 = np.mean([s["event_1_fraction"] for s in summaries])
    ev2 = np.mean([s["event_2_fraction"] for s in summaries])
    visits = np.mean([s["visits_per_patient_mean"] for s in summaries])
    assert abs(ev1 - 0.240) < 0.05
    assert abs(ev2 - 0.093) < 0.04
    assert abs(visits - 6.9) < 1.0


@pytest.mark.parametrize("mode", ["real-like", "no-link"])
def test_structural_invariants(mode):
    cohort = simulate_dataset(paper_config(link_mode=mode, seed=3, n_patients=200))
    for p in cohort.dataset.patients:
        assert p.n_visits >= 2
        assert np.all(np.diff(p.times) > 0)
        assert np.all((p.values > 0) & (p.values < 1))
        assert p.event_code in (0, 1, 2)
        if p.event_code:
            assert p.times[-1] <= p.event_time
        else:
            assert p.event_time == p.times[-1]
    assert len(cohort.truth) == 200
    assert (cohort.survival_truth is not None) == (mode == "no-link")


def test_zero_noise_lies_on_trajectories():
    fe = dataclasses.replace(paper_fixed_effects(), sigma_noise=np.zeros(4))
    cohort = simulate_dataset(SimulationConfig(fe, n_patients=30, seed=5))
    geometry = Geometry.from_effects(fe)
    for i, p in enumerate(cohort.dataset.patients):
        expected = individual_trajectory(fe, cohort.truth.patient(i), geometry, None, p.times)
        assert np.allclose(p.values, np.clip(expected, 1e-6, 1 - 1e-6), atol=1e-15)


def test_weibull_draw_mean_matches_gamma_formula():
    rng = np.random.default_rng(0)
    nu, rho = 2.8, 1.7
    t = sample_event_times(rng, 0.0, 0.0, 0.0, nu, rho, size=10**6)
    expected = nu * math.gamma(1 + 1 / rho)
    assert abs(t.mean() / expected - 1) < 0.005


def test_no_link_decouples_speed_from_event_times():
    cohort = simulate_dataset(paper_config(link_mode="no-link", seed=11, n_patients=10_000))
    xi = cohort.truth.xi
    t_e = np.array([p.event_time for p in cohort.dataset.patients])
    # the event clock is drawn independently; only the visit-driven censoring remains
    ev = np.array([p.event_code > 0 for p in cohort.dataset.patients])
    assert abs(np.corrcoef(xi[ev], t_e[ev] - cohort.truth.tau[ev])[0, 1]) < 0.05
    ev_xi = cohort.survival_truth.xi
    assert abs(np.corrcoef(xi, ev_xi)[0, 1]) < 0.02


def test_real_like_speed_drives_events():
    cohort = simulate_dataset(paper_config(seed=11, n_patients=3000))
    codes = np.array([p.event_code for p in cohort.dataset.patients])
    # faster patients reach an event more often within the observation window
    assert cohort.truth.xi[codes > 0].mean() > cohort.truth.xi[codes == 0].mean() + 0.2


def test_summary_totals_are_sums():
    ds = simulate_dataset(paper_config(seed=2, n_patients=25)).dataset
    s = dataset_summary(ds)
    assert s["n_visits"] == sum(p.n_visits for p in ds.patients)
    assert s["n_patients"] == 25
    assert s["event_1_count"] + s["event_2_count"] <= 25


def test_single_patient_summary():
    ds = simulate_dataset(paper_config(seed=2, n_patients=1)).dataset
    s = dataset_summary(ds)
    assert s["n_patients"] == 1 and s["visits_per_patient_sd"] == 0.0


@pytest.mark.parametrize("field,value", [("followup_sd", 0.0), ("baseline_offset_sd", -1.0),
                                         ("padding_interval", 0.0), ("link_mode", "other")])
def test_invalid_config_rejected(field, value):
    cfg = dataclasses.replace(paper_config(n_patients=3), **{field: value})
    with pytest.raises(ValidationError):
        simulate_dataset(cfg)
