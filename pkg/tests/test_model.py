import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spatiojoint.errors import DomainError, ValidationError
from spatiojoint.model import (
    Dataset,
    FixedEffects,
    Geometry,
    Hyperparameters,
    LatentFixedEffects,
    PatientRecord,
    RandomEffects,
    cif,
    hazard,
    individual_trajectory,
    latent_age,
    orthonormal_basis,
    overall_survival,
    population_trajectory,
    survival,
)

from conftest import random_fixed_effects


class TestLatentAge:
    def test_reference_patient_is_identity(self):
        t = np.linspace(0, 10, 7)
        np.testing.assert_allclose(latent_age(0.0, 5.0, 5.0, t), t)

    def test_speed_doubles_elapsed_time(self):
        assert latent_age(np.log(2.0), 4.0, 5.0, 6.0) == pytest.approx(9.0)


class TestBasis:
    @given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6))
    @settings(max_examples=60, deadline=None)
    def test_orthonormal_and_orthogonal_to_v0(self, v0):
        v0 = np.array(v0)
        B = orthonormal_basis(v0)
        assert B.shape == (v0.size, v0.size - 1)
        np.testing.assert_allclose(B.T @ B, np.eye(v0.size - 1), atol=1e-12)
        np.testing.assert_allclose(v0 @ B, 0.0, atol=1e-12)

    def test_negative_leading_component(self):
        B = orthonormal_basis([-0.5, 0.2, 0.1])
        np.testing.assert_allclose(np.array([-0.5, 0.2, 0.1]) @ B, 0.0, atol=1e-14)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValidationError):
            orthonormal_basis([0.0, 0.0])

    def test_space_shift_orthogonal_to_v0(self, rng):
        fe = random_fixed_effects(rng)
        geo = Geometry.from_effects(fe)
        w = geo.mixing @ rng.normal(size=fe.n_sources)
        assert abs(w @ fe.v0) < 1e-12


class TestTrajectories:
    def test_value_at_reference_time(self, reference_effects):
        fe = reference_effects
        for k in range(fe.n_outcomes):
            assert population_trajectory(fe, k, fe.t0) == pytest.approx(1.0 / (1.0 + fe.g[k]), abs=1e-15)

    def test_slope_at_reference_time(self, reference_effects):
        fe = reference_effects
        h = 1e-6
        for k in range(fe.n_outcomes):
            slope = (population_trajectory(fe, k, fe.t0 + h) - population_trajectory(fe, k, fe.t0 - h)) / (2 * h)
            assert slope == pytest.approx(fe.v0[k], rel=1e-6)

    def test_reference_individual_matches_population(self, reference_effects):
        fe = reference_effects
        geo = Geometry.from_effects(fe)
        re = RandomEffects(0.0, fe.t0, np.zeros(fe.n_sources))
        t = np.linspace(2, 9, 11)
        for k in range(fe.n_outcomes):
            np.testing.assert_allclose(individual_trajectory(fe, re, geo, k, t), population_trajectory(fe, k, t))

    def test_values_inside_unit_interval_and_monotone(self, rng):
        fe = random_fixed_effects(rng)
        geo = Geometry.from_effects(fe)
        re = RandomEffects(0.3, fe.t0 - 1, rng.normal(size=fe.n_sources))
        y = individual_trajectory(fe, re, geo, None, np.linspace(-20, 30, 200))
        assert np.all((y >= 0) & (y <= 1))
        assert np.all(np.diff(y, axis=0) >= 0)


class TestSurvival:
    def test_survival_is_one_at_tau(self, rng):
        fe = random_fixed_effects(rng)
        re = RandomEffects(0.2, 4.0, np.zeros(fe.n_sources))
        u = np.zeros(fe.n_events)
        for l in range(fe.n_events):
            assert survival(fe, re, u, l, 4.0) == 1.0
            assert survival(fe, re, u, l, 3.0) == 1.0

    def test_hazard_undefined_before_tau(self, reference_effects):
        re = RandomEffects(0.0, 5.0, np.zeros(2))
        with pytest.raises(DomainError):
            hazard(reference_effects, re, np.zeros(2), 0, 5.0)

    def test_exponential_hazard_is_constant(self):
        fe = FixedEffects(5.0, 1.0, 0.5, [2, 3], [0.1, 0.2], [0.1, 0.1], [2.0], [1.0], [[0.0]], [[0.0]])
        re = RandomEffects(0.0, 1.0, np.zeros(1))
        np.testing.assert_allclose(hazard(fe, re, np.zeros(1), 0, np.array([1.5, 3.0, 8.0])), 0.5)

    def test_cif_sum_matches_overall_survival(self, rng):
        fe = random_fixed_effects(rng)
        re = RandomEffects(0.1, fe.t0, rng.normal(size=fe.n_sources))
        u = fe.zeta @ re.sources
        for t in fe.t0 + rng.uniform(0.01, 6, 20):
            total = sum(cif(fe, re, u, l, t) for l in range(fe.n_events))
            assert total == pytest.approx(1 - overall_survival(fe, re, u, t), abs=1e-6)

    def test_single_cause_cif_is_one_minus_survival(self, reference_effects):
        fe = FixedEffects(5.0, 1.0, 0.5, [2, 3], [0.1, 0.2], [0.1, 0.1], [2.5], [1.8], [[0.0]], [[0.3]])
        re = RandomEffects(-0.2, 4.5, np.array([0.4]))
        u = fe.zeta @ re.sources
        t = np.array([4.6, 5.5, 7.0, 12.0])
        np.testing.assert_allclose(cif(fe, re, u, 0, t), 1 - survival(fe, re, u, 0, t), atol=1e-8)


class TestContainers:
    def test_hyperparameter_source_bounds(self):
        with pytest.raises(ValidationError):
            Hyperparameters(4, 2, 4)
        with pytest.raises(ValidationError):
            Hyperparameters(4, 2, 0)

    def test_fixed_effects_validation(self, reference_effects):
        bad = FixedEffects(**{**reference_effects.as_dict(), "v0": -reference_effects.v0})
        with pytest.raises(ValidationError):
            bad.validate()

    def test_latent_round_trip(self, reference_effects):
        z = LatentFixedEffects.from_fixed(reference_effects)
        back = reference_effects.with_latent(z)
        for key, value in reference_effects.as_dict().items():
            np.testing.assert_allclose(getattr(back, key), value)

    def test_dataset_rejects_out_of_range_values(self):
        with pytest.raises(ValidationError):
            Dataset([PatientRecord("a", [1.0, 2.0], [[0.5, 1.2], [0.5, 0.5]], 3.0, 0)])

    def test_dataset_rejects_unsorted_times(self):
        with pytest.raises(ValidationError):
            Dataset([PatientRecord("a", [2.0, 1.0], [[0.5, 0.2], [0.5, 0.5]], 3.0, 0)])

    def test_min_visits(self):
        ds = Dataset([PatientRecord("a", [1.0], [[0.5, 0.2]], 3.0, 0)])
        with pytest.raises(ValidationError, match="patient a"):
            ds.require_min_visits(2)

    def test_flat_layout(self):
        ds = Dataset([PatientRecord("a", [1.0, 2.0], [[0.1, 0.2], [0.3, 0.4]], 3.0, 1),
                      PatientRecord("b", [0.5], [[0.5, 0.6]], 4.0, 0)])
        flat = ds.flat()
        np.testing.assert_array_equal(flat["patient"], [0, 0, 1])
        np.testing.assert_array_equal(flat["starts"], [0, 2])
        assert ds.n_events == 1
