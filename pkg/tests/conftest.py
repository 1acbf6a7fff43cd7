import numpy as np
import pytest

from ravi_ucb.mdp import TabularMdp

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def single_state_mdp(reward=1.0, gamma=0.5):
    return TabularMdp(reward=[[reward]], transition=[[[1.0]]], discount=gamma, init_dist=[1.0])


def two_state_chain(gamma=0.9):
    """State 0 moves to the absorbing rewarding state 1 under action 1."""
    transition = np.zeros((2, 2, 2))
    transition[0, 0, 0] = 1.0
    transition[0, 1, 1] = 1.0
    transition[1, :, 1] = 1.0
    reward = np.array([[0.0, 0.0], [1.0, 1.0]])
    return TabularMdp(reward=reward, transition=transition, discount=gamma, init_dist=[1.0, 0.0])


def random_policy(n_states, n_actions, rng, alpha=1.0):
    return rng.dirichlet(np.full(n_actions, alpha), size=n_states)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
