import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ldgrad.mdp import SoftmaxPolicy, TabularMdp, make_bandit, make_gridworld, random_mdp

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def single_state_mdp(reward=0.0):
    return TabularMdp(np.ones((1, 1, 1)), np.full((1, 1), reward), np.ones(1))


def two_state_cycle(reward=(1.0, 0.0)):
    """Deterministic 0 -> 1 -> 0, one action, starts in 0."""
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = 1.0
    P[1, 0, 0] = 1.0
    return TabularMdp(P, np.array(reward, float)[:, None], np.array([1.0, 0.0]))


def two_state_mdp():
    P = np.array([[[0.7, 0.3], [0.2, 0.8]], [[0.6, 0.4], [0.1, 0.9]]])
    return TabularMdp(P, np.array([[1.0, 0.0], [0.0, 0.5]]), np.array([1.0, 0.0]), name="two-state")


def random_policy(mdp, rng, scale=1.0):
    return SoftmaxPolicy.for_mdp(mdp, rng.normal(scale=scale, size=mdp.num_pairs))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid3():
    return make_gridworld(3)


@pytest.fixture
def bandit():
    return make_bandit()


@pytest.fixture
def small_random(rng):
    mdp = random_mdp(4, 2, rng)
    return mdp, random_policy(mdp, rng)
