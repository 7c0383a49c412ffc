import numpy as np
import pytest

from spatiojoint.model import Dataset, FixedEffects, PatientRecord, RandomEffects
from spatiojoint.simulation import paper_fixed_effects


def random_fixed_effects(rng, K=4, L=2, Ns=2) -> FixedEffects:
    return FixedEffects(
        t0=rng.uniform(3, 7),
        sigma_tau=rng.uniform(0.5, 1.5),
        sigma_xi=rng.uniform(0.3, 1.0),
        g=rng.uniform(1.5, 15, K),
        v0=rng.uniform(0.05, 0.3, K),
        sigma_noise=rng.uniform(0.03, 0.15, K),
        nu=rng.uniform(1.5, 5, L),
        rho=rng.uniform(0.7, 3, L),
        beta=rng.normal(0, 0.1, (K - 1, Ns)),
        zeta=rng.normal(0, 0.2, (L, Ns)),
    )


def random_patient(rng, fe: FixedEffects, re: RandomEffects, pid="p", n_visits=None, code=None):
    """Visits after tau and an event strictly after tau (away from the barrier)."""
    n = rng.integers(1, 7) if n_visits is None else n_visits
    start = float(re.tau) + rng.uniform(-0.5, 0.5)
    times = start + np.sort(rng.uniform(0, 2, n))
    values = rng.uniform(0.05, 0.95, (n, fe.n_outcomes))
    code = int(rng.integers(0, fe.n_events + 1)) if code is None else code
    t_e = max(times[-1] if n else start, float(re.tau) + 0.2) + rng.uniform(0.05, 1.0)
    return PatientRecord(pid, times, values, t_e, code)


def random_effects_for(rng, fe: FixedEffects) -> RandomEffects:
    return RandomEffects(rng.normal(0, fe.sigma_xi), fe.t0 + rng.normal(0, fe.sigma_tau), rng.normal(0, 1, fe.n_sources))


def random_micro_dataset(rng, fe: FixedEffects, n_patients: int):
    res = [random_effects_for(rng, fe) for _ in range(n_patients)]
    patients = [random_patient(rng, fe, re, pid=f"p{i}", n_visits=int(rng.integers(1, 5))) for i, re in enumerate(res)]
    cohort = RandomEffects(np.array([r.xi for r in res]), np.array([r.tau for r in res]),
                           np.array([r.sources for r in res]))
    return Dataset(patients, n_outcomes=fe.n_outcomes), cohort


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def reference_effects():
    return paper_fixed_effects()


# --- shared desk-scale runs (slow) --------------------------------------------

REAL_LIKE_SEED = 0
DESK_ITERATIONS = 20_000


@pytest.fixture(scope="session")
def real_like_cohort():
    from spatiojoint.simulation import paper_config, simulate_dataset
    return simulate_dataset(paper_config("real-like", seed=REAL_LIKE_SEED))


@pytest.fixture(scope="session")
def real_like_fit(real_like_cohort):
    from spatiojoint.estimation import SaemSettings, fit
    from spatiojoint.model import Hyperparameters
    return fit(real_like_cohort.dataset, Hyperparameters(4, 2, 2),
               SaemSettings(n_iterations=DESK_ITERATIONS, seed=REAL_LIKE_SEED))


# --- acceptance report ----------------------------------------------------------

ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> bool:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
