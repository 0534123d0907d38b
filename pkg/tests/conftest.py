import numpy as np
import pytest

from wigsim import config as cfgmod
from wigsim.potential import fit_gaussian_sum


@pytest.fixture(scope="session")
def paper_cfg():
    return cfgmod.load_config({})


@pytest.fixture(scope="session")
def system(paper_cfg):
    return cfgmod.physical_system(paper_cfg)


@pytest.fixture(scope="session")
def fitted(paper_cfg, system):
    """The production fit of the clamped double well (built once)."""
    fit_cfg = cfgmod.fit_config(paper_cfg)
    target = cfgmod.truncated_potential_callable(system)
    model, report = fit_gaussian_sum(target, fit_cfg)
    return model, report


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
