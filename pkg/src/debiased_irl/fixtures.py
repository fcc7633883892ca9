"""Reference MDPs used throughout the tests and experiments."""

from importlib import resources
import json

import numpy as np

from .mdp_core import TabularMDP, mdp_from_dict

RING2_REWARD = np.array([[1.0, 0.0], [0.0, 1.0]])
RING2N_REWARD = np.array([[0.0, 0.0], [1.0, -0.5]])


def ring2_mdp(gamma=0.9):
    """Two states; action 0 stays and action 1 switches, each with probability 0.9."""
    stay = np.array([[0.9, 0.1], [0.1, 0.9]])
    switch = np.array([[0.1, 0.9], [0.9, 0.1]])
    return TabularMDP(np.stack([stay, switch]), np.array([0.5, 0.5]), gamma)


def ring2():
    """RING2 dynamics with its reference reward."""
    return ring2_mdp(), RING2_REWARD.copy()


def ring2_n():
    """RING2 dynamics with a reward normalized against action 0."""
    return ring2_mdp(), RING2N_REWARD.copy()


def load_fixture(name):
    """Load a bundled MDP JSON file (``"ring2"`` or ``"ring2n"``)."""
    text = resources.files("debiased_irl").joinpath("data", f"{name}.json").read_text()
    return mdp_from_dict(json.loads(text))


def random_mdp(n_states, n_actions, gamma, rng, floor=0.01, reward_scale=1.0):
    """Random MDP with Dirichlet kernel rows mixed toward a uniform floor.

    Parameters
    ----------
    rng : numpy.random.Generator
    floor : float
        Minimum transition probability and minimum ``rho0`` entry.

    Returns
    -------
    mdp : TabularMDP
    reward : ndarray, shape (A, S)
    """
    raw = rng.dirichlet(np.ones(n_states), size=(n_actions, n_states))
    kernel = floor + (1.0 - n_states * floor) * raw
    rho0 = floor + (1.0 - n_states * floor) * rng.dirichlet(np.ones(n_states))
    reward = reward_scale * rng.standard_normal((n_actions, n_states))
    return TabularMDP(kernel, rho0, gamma), reward


def random_policy(n_states, n_actions, rng, floor=0.0):
    """Random policy table ``pi[a, s]`` with entries at least ``floor``."""
    raw = rng.dirichlet(np.ones(n_actions), size=n_states).T
    return floor + (1.0 - n_actions * floor) * raw
