"""Desk-scale reference instances.

Both reference instances share one 5-state / 2-action MDP with gamma = 0.5:
its kernel is a fixed convex mixture of three random kernels, so the tabular
reference is simply the base MDP of the mixture reference.
"""

from __future__ import annotations

import numpy as np

from .linmix import LinearMixtureMdp, build_convex_mixture_env
from .mdp import TabularMdp, random_mdp

REFERENCE_SEED = 3
REFERENCE_GAMMA = 0.5
REFERENCE_THETA = (0.5, 0.3, 0.2)


def random_convex_mixture(n_states: int, n_actions: int, d: int, gamma: float, rng,
                          theta=None, concentration: float = 0.5) -> LinearMixtureMdp:
    kernels = rng.dirichlet(np.full(n_states, concentration), size=(d, n_states, n_actions))
    reward = rng.random((n_states, n_actions))
    if theta is None:
        theta = rng.dirichlet(np.ones(d))
    return build_convex_mixture_env(kernels, theta, reward, gamma,
                                    np.full(n_states, 1.0 / n_states))


def reference_mixture() -> LinearMixtureMdp:
    rng = np.random.default_rng(REFERENCE_SEED)
    return random_convex_mixture(5, 2, 3, REFERENCE_GAMMA, rng, theta=REFERENCE_THETA)


def reference_tabular() -> TabularMdp:
    return reference_mixture().base


def example_tabular(n_states: int, n_actions: int, gamma: float, seed: int) -> TabularMdp:
    return random_mdp(n_states, n_actions, gamma, np.random.default_rng(seed))
