"""Count-based transition estimates and Hoeffding-style bonuses for tabular MDPs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .planner import EpochModel


@dataclass
class CountTables:
    """Visit counts; ``n`` starts at 1 so that n = 1 + n3.sum(axis=2) always."""

    n: np.ndarray
    n3: np.ndarray

    @classmethod
    def fresh(cls, n_states: int, n_actions: int) -> "CountTables":
        return cls(n=np.ones((n_states, n_actions), dtype=np.int64),
                   n3=np.zeros((n_states, n_actions, n_states), dtype=np.int64))

    def to_dict(self) -> dict:
        return {"n": self.n.tolist(), "n3": self.n3.tolist()}


def record_transition_tab(counts: CountTables, x: int, a: int, x_next: int) -> CountTables:
    n_states, n_actions = counts.n.shape
    if not (0 <= x < n_states and 0 <= a < n_actions and 0 <= x_next < n_states):
        raise InputError(f"transition ({x}, {a}, {x_next}) out of range")
    counts.n[x, a] += 1
    counts.n3[x, a, x_next] += 1
    return counts


def mle_estimate(counts: CountTables) -> np.ndarray:
    """P_hat(y|x,a) = n3(x,a,y) / n(x,a); rows are sub-stochastic."""
    return counts.n3 / counts.n[:, :, None]


def tabular_bonus(counts: CountTables, beta: float, cap: float = math.inf) -> np.ndarray:
    """beta / sqrt(n(x,a)), clamped above at ``cap`` (the planner passes H)."""
    if beta < 0:
        raise InputError("beta must be nonnegative")
    return np.minimum(beta / np.sqrt(counts.n), cap)


def tabular_beta(n_states: int, n_actions: int, T: int, delta: float, horizon: float) -> float:
    """beta = 8 H sqrt(|X| log(|X||A|T/delta))."""
    if not 0 < delta < 1:
        raise InputError(f"delta must lie in (0, 1), got {delta}")
    if min(n_states, n_actions, T) < 1 or horizon <= 0:
        raise InputError("sizes, T and H must be positive")
    return 8.0 * horizon * math.sqrt(n_states * math.log(n_states * n_actions * T / delta))


class CountEstimator:
    """Tabular backend: empirical kernel and count bonuses capped at H."""

    def __init__(self, n_states: int, n_actions: int, beta: float, horizon: float):
        self.counts = CountTables.fresh(n_states, n_actions)
        self.beta = float(beta)
        self.horizon = float(horizon)
        self._n = self.counts.n
        self._n3 = self.counts.n3

    def begin_epoch(self, v) -> EpochModel:
        p_hat = mle_estimate(self.counts)
        return EpochModel(estimated_pv=p_hat @ v,
                          bonus=tabular_bonus(self.counts, self.beta, self.horizon),
                          summary={"n": self.counts.n.copy()})

    def record(self, x: int, a: int, x_next: int) -> None:
        # hot path: skips the index validation of record_transition_tab
        self._n[x, a] += 1
        self._n3[x, a, x_next] += 1
