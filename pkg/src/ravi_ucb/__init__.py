"""Optimistic regularized value iteration (RAVI-UCB) for discounted MDPs.

Tabular and linear-mixture estimator backends, exact occupancy-measure
oracles, numerical checks of the algorithm's guarantees, and a seeded
experiment harness.
"""

from .errors import DomainError, InputError, NumericalError
from .linmix import LeastSquaresEstimator, LinearMixtureMdp, linmix_beta
from .mdp import TabularMdp, occupancy_measure, random_mdp, value_iteration
from .planner import PlannerConfig, RunLog, run_ravi_ucb, softmax_update
from .tabular import CountEstimator, tabular_beta

__all__ = [
    "CountEstimator", "DomainError", "InputError", "LeastSquaresEstimator", "LinearMixtureMdp",
    "NumericalError", "PlannerConfig", "RunLog", "TabularMdp", "linmix_beta", "occupancy_measure",
    "random_mdp", "run_ravi_ucb", "softmax_update", "tabular_beta", "value_iteration",
]
