import numpy as np
import pytest

from sgdclt import problems as pr


@pytest.fixture(scope="session")
def logistic10():
    """The d=10 reference logistic problem used across suites."""
    ds = pr.generate_logistic(d=10, N=1000, beta=0.05, seed=7)
    problem = pr.logistic_problem(ds)
    noise = pr.MiniBatchNoise(ds, batch_size=1)
    sigma = pr.sigma_at_min(problem, noise)
    return ds, problem, noise, sigma


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
