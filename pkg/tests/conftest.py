import pytest

from tivaloop import ControllerConfig, builtin_cohort
from tivaloop.engine import run_cohort
from tivaloop.scenario import NoiseModel, induction_scenario, standard_scenario

MASTER_SEED = 42


@pytest.fixture(scope="session")
def cohort():
    return builtin_cohort()


@pytest.fixture(scope="session")
def default_cfg():
    return ControllerConfig()


@pytest.fixture(scope="session")
def induction_result(cohort, default_cfg):
    """13-patient induction-only cohort run with default config."""
    return run_cohort(cohort, induction_scenario(horizon=10.0), default_cfg,
                      master_seed=MASTER_SEED)


@pytest.fixture(scope="session")
def standard_result(cohort, default_cfg):
    """13-patient standard 60-min run, noise-free."""
    return run_cohort(cohort, standard_scenario(), default_cfg,
                      master_seed=MASTER_SEED)


@pytest.fixture(scope="session")
def noisy_standard_result(cohort, default_cfg):
    """13-patient standard 60-min run with 2-BIS band-limited noise."""
    return run_cohort(cohort, standard_scenario(noise=NoiseModel(std=2.0)),
                      default_cfg, master_seed=MASTER_SEED)
