import warnings

import numpy as np
import pytest

from pvpump.forecast import NonStationaryFit
from pvpump.harness import (ExperimentConfig, derived_seeds,
                            prepare_experiment)
from pvpump.plant import ExcitationDesign, default_network, identify_linear_model


@pytest.fixture(autouse=True)
def _quiet_boundary_warning():
    """Intermediate short-history refits may clamp phi; not under test here."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonStationaryFit)
        yield


@pytest.fixture(scope="session")
def network():
    return default_network()


@pytest.fixture(scope="session")
def identified(network):
    config = ExperimentConfig()
    _, _, ident_seed = derived_seeds(config.seed)
    design = ExcitationDesign(seed=ident_seed)
    return identify_linear_model(network, design, 1.0)


@pytest.fixture(scope="session")
def model(identified):
    return identified.model


@pytest.fixture(scope="session")
def default_setup():
    """One fully prepared default experiment shared across test modules."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonStationaryFit)
        return prepare_experiment(ExperimentConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(7)
