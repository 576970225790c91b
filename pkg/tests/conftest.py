import numpy as np
import pytest

from dget import graph, problems


@pytest.fixture
def ring8():
    return graph.metropolis_weights(graph.ring(8))


@pytest.fixture
def quad8():
    return problems.make_problem("shifted-quadratic", 8, 64, 5, seed=3)


@pytest.fixture
def logistic8():
    return problems.make_problem("nonconvex-logistic", 8, 200, 10, seed=1, lam=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
