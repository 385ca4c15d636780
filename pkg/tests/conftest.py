import numpy as np
import pytest

from gpyield.config import build_run_config, default_waveguide_config


@pytest.fixture(scope="session")
def waveguide_config():
    return build_run_config(default_waveguide_config())


@pytest.fixture(scope="session")
def waveguide_problem(waveguide_config):
    return waveguide_config.problem()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
