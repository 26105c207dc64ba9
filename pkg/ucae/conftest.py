import numpy as np
import pytest

from ucae.linalg import Rng
from ucae.sem_world import DomainGen, SemSpec, make_sem


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow training experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def identity_world():
    """d=1, one domain with n=1, m=0, no warp: f is the identity."""
    gen = DomainGen(obs_dim=1, noise_dim=0, mix=np.array([[1.0]]), offset=np.zeros(1), warp_alpha=0.0)
    return SemSpec(latent_dim=1, domains=[gen], seed=0)


@pytest.fixture
def noiseless_world():
    """Three warped domains with m=0, so oracle translations are deterministic."""
    return make_sem(2, [(4, 0), (5, 0), (3, 0)], 0.5, Rng(7))


@pytest.fixture
def w4_world():
    return make_sem(2, [(6, 0), (8, 1), (6, 0), (10, 2)], 0.5, Rng(0))
