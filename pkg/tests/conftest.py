import pytest

from painstates.pipeline import cohort_features
from painstates.synth import generate_cohort, preset_spec


@pytest.fixture(scope="session")
def default_cohort():
    return generate_cohort(preset_spec(5))


@pytest.fixture(scope="session")
def default_features(default_cohort):
    return cohort_features(default_cohort)


@pytest.fixture(scope="session")
def small_cohort():
    return generate_cohort(preset_spec(3, n_participants=12, days_per_participant=40, event_day=20, seed=5))
