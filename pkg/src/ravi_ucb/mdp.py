"""Finite discounted MDPs and exact dynamic-programming oracles.

Policies, value functions and occupancy measures are plain numpy arrays:

    policy          (n_states, n_actions), rows on the simplex
    value function  (n_states,)
    action values   (n_states, n_actions)
    occupancy       (n_states, n_actions), total mass 1
"""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DomainError, InputError, NumericalError

INPUT_TOL = 1e-12
MEASURE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Discounted MDP with known rewards.

    transition[x, a, y] is P(y | x, a); init_dist is the reset distribution.
    """

    reward: np.ndarray
    transition: np.ndarray
    discount: float
    init_dist: np.ndarray

    def __post_init__(self):
        reward = np.array(self.reward, dtype=float)
        transition = np.array(self.transition, dtype=float)
        init_dist = np.array(self.init_dist, dtype=float)
        if reward.ndim != 2:
            raise InputError(f"reward must be a matrix, got shape {reward.shape}")
        n_states, n_actions = reward.shape
        if n_states < 1 or n_actions < 1:
            raise InputError("need at least one state and one action")
        if transition.shape != (n_states, n_actions, n_states):
            raise InputError(
                f"transition shape {transition.shape} != {(n_states, n_actions, n_states)}"
            )
        if init_dist.shape != (n_states,):
            raise InputError(f"init_dist shape {init_dist.shape} != {(n_states,)}")
        if not 0.0 < float(self.discount) < 1.0:
            raise InputError(f"discount must lie in (0, 1), got {self.discount}")
        if not np.all(np.isfinite(reward)) or reward.min() < 0.0 or reward.max() > 1.0:
            raise InputError("rewards must lie in [0, 1]")
        if transition.min() < 0.0:
            raise InputError("transition probabilities must be nonnegative")
        row_err = np.abs(transition.sum(axis=2) - 1.0).max()
        if row_err > INPUT_TOL:
            raise InputError(f"transition rows must sum to 1 (max error {row_err:.3e})")
        if init_dist.min() < 0.0 or abs(init_dist.sum() - 1.0) > INPUT_TOL:
            raise InputError("init_dist must be a probability vector")
        for arr in (reward, transition, init_dist):
            arr.setflags(write=False)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "init_dist", init_dist)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def horizon(self) -> float:
        """Effective horizon H = 1 / (1 - gamma)."""
        return 1.0 / (1.0 - self.discount)

    @cached_property
    def _cdf_rows(self) -> list[list[list[float]]]:
        return np.cumsum(self.transition, axis=2).tolist()

    @cached_property
    def _init_cdf(self) -> list[float]:
        return np.cumsum(self.init_dist).tolist()

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.discount,
            "nu0": self.init_dist.tolist(),
            "reward": self.reward.tolist(),
            "transition": self.transition.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularMdp":
        missing = [k for k in ("n_states", "n_actions", "gamma", "nu0", "reward", "transition")
                   if k not in doc]
        if missing:
            raise InputError(f"MDP document is missing keys: {', '.join(missing)}")
        mdp = cls(reward=doc["reward"], transition=doc["transition"],
                  discount=doc["gamma"], init_dist=doc["nu0"])
        if (mdp.n_states, mdp.n_actions) != (doc["n_states"], doc["n_actions"]):
            raise InputError("n_states/n_actions disagree with the array shapes")
        return mdp

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TabularMdp":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def validate_policy(mdp: TabularMdp, pi: np.ndarray) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise InputError(f"policy shape {pi.shape} != {(mdp.n_states, mdp.n_actions)}")
    if pi.min() < 0.0 or np.abs(pi.sum(axis=1) - 1.0).max() > INPUT_TOL:
        raise InputError("policy rows must be probability distributions")
    return pi


def _check_value(mdp: TabularMdp, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (mdp.n_states,):
        raise InputError(f"value function shape {v.shape} != {(mdp.n_states,)}")
    return v


def uniform_policy(n_states: int, n_actions: int) -> np.ndarray:
    return np.full((n_states, n_actions), 1.0 / n_actions)


def greedy_policy(q: np.ndarray) -> np.ndarray:
    """Deterministic policy putting all mass on the first maximizing action."""
    q = np.asarray(q)
    pi = np.zeros_like(q, dtype=float)
    pi[np.arange(q.shape[0]), q.argmax(axis=1)] = 1.0
    return pi


def expected_next_value(mdp: TabularMdp, v) -> np.ndarray:
    """(Pv)(x, a) = sum_y P(y | x, a) v(y)."""
    return mdp.transition @ _check_value(mdp, v)


def bellman_backup(mdp: TabularMdp, v) -> np.ndarray:
    return mdp.reward + mdp.discount * expected_next_value(mdp, v)


def value_iteration(mdp: TabularMdp, tol: float = 1e-10, max_iter: int = 1_000_000):
    """Optimal (V*, Q*) to sup-norm accuracy ``tol``.

    Stops once the Bellman residual is at most tol * (1 - gamma), which
    certifies ||V - V*|| <= tol.
    """
    if tol <= 0:
        raise InputError("tol must be positive")
    gamma = mdp.discount
    v = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        q = mdp.reward + gamma * (mdp.transition @ v)
        v_new = q.max(axis=1)
        residual = np.abs(v_new - v).max()
        v = v_new
        if residual <= tol * (1.0 - gamma):
            break
    else:
        raise NumericalError("value iteration did not reach the requested tolerance")
    return v, mdp.reward + gamma * (mdp.transition @ v)


def policy_matrices(mdp: TabularMdp, pi):
    """Policy-averaged kernel P_pi (n_states x n_states) and reward r_pi."""
    pi = validate_policy(mdp, pi)
    p_pi = np.einsum("xa,xay->xy", pi, mdp.transition)
    r_pi = (pi * mdp.reward).sum(axis=1)
    return p_pi, r_pi


def policy_evaluation(mdp: TabularMdp, pi) -> np.ndarray:
    """Exact V^pi from (I - gamma P_pi) V = r_pi."""
    p_pi, r_pi = policy_matrices(mdp, pi)
    system = np.eye(mdp.n_states) - mdp.discount * p_pi
    try:
        v = np.linalg.solve(system, r_pi)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"policy evaluation system is singular: {exc}") from exc
    residual = np.abs(system @ v - r_pi).max()
    if not residual <= MEASURE_TOL:
        raise NumericalError(f"policy evaluation residual {residual:.3e} exceeds {MEASURE_TOL}")
    return v


def state_occupancy(mdp: TabularMdp, pi) -> np.ndarray:
    """nu^pi solving nu = (1 - gamma) nu0 + gamma P_pi^T nu."""
    p_pi, _ = policy_matrices(mdp, pi)
    gamma = mdp.discount
    system = np.eye(mdp.n_states) - gamma * p_pi.T
    try:
        nu = np.linalg.solve(system, (1.0 - gamma) * mdp.init_dist)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"flow system is singular: {exc}") from exc
    # round-off can leave -1e-17 entries on unreachable states
    return np.where(np.abs(nu) < 1e-15, 0.0, nu)


def occupancy_measure(mdp: TabularMdp, pi) -> np.ndarray:
    pi = validate_policy(mdp, pi)
    mu = state_occupancy(mdp, pi)[:, None] * pi
    residual = flow_residual(mdp, mu)
    if not residual <= MEASURE_TOL:
        raise NumericalError(f"occupancy flow residual {residual:.3e} exceeds {MEASURE_TOL}")
    return mu


def normalized_return(mdp: TabularMdp, pi) -> float:
    """<mu^pi, r>; the discounted return is H times this."""
    return float((occupancy_measure(mdp, pi) * mdp.reward).sum())


def flow_residual(mdp: TabularMdp, mu) -> float:
    """Sup-norm violation of E^T mu = gamma P^T mu + (1 - gamma) nu0."""
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (mdp.n_states, mdp.n_actions):
        raise InputError(f"occupancy shape {mu.shape} != {(mdp.n_states, mdp.n_actions)}")
    inflow = np.einsum("xa,xay->y", mu, mdp.transition)
    gap = mu.sum(axis=1) - mdp.discount * inflow - (1.0 - mdp.discount) * mdp.init_dist
    return float(np.abs(gap).max())


def _kl_terms(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Entrywise p log(p / q) with 0 log 0 = 0; raises if p > 0 where q = 0."""
    if np.any((p > 0) & (q <= 0)):
        raise DomainError("absolute continuity violated: p > 0 where q = 0")
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = p[pos] * np.log(p[pos] / q[pos])
    return out


def policy_kl(pi, pi_ref) -> np.ndarray:
    """Per-state KL(pi(.|x) || pi_ref(.|x))."""
    pi = np.asarray(pi, dtype=float)
    return _kl_terms(pi, np.asarray(pi_ref, dtype=float)).sum(axis=1)


def conditional_relative_entropy(mdp: TabularMdp, pi, pi_ref) -> float:
    """<nu^pi, KL(pi || pi_ref)>."""
    pi = validate_policy(mdp, pi)
    pi_ref = validate_policy(mdp, pi_ref)
    kl = policy_kl(pi, pi_ref)
    return float(max(state_occupancy(mdp, pi) @ kl, 0.0))


def occupancy_kl(mu, mu_ref) -> float:
    mu = np.asarray(mu, dtype=float)
    mu_ref = np.asarray(mu_ref, dtype=float)
    if mu.shape != mu_ref.shape:
        raise InputError("occupancy measures must have the same shape")
    return float(_kl_terms(mu, mu_ref).sum())


def _inverse_cdf(cdf: list[float], u: float) -> int:
    i = bisect_right(cdf, u)
    # u can land past the last prefix sum when rows sum to 1 - 1e-16
    return i if i < len(cdf) else len(cdf) - 1


def sample_step(mdp: TabularMdp, x: int, a: int, rng) -> int:
    """Next state by inverse CDF; consumes exactly one ``rng.random()``."""
    if not (0 <= x < mdp.n_states and 0 <= a < mdp.n_actions):
        raise InputError(f"state/action ({x}, {a}) out of range")
    return _inverse_cdf(mdp._cdf_rows[x][a], rng.random())


def sample_initial(mdp: TabularMdp, rng) -> int:
    return _inverse_cdf(mdp._init_cdf, rng.random())


def random_mdp(n_states: int, n_actions: int, gamma: float, rng, *,
               concentration: float = 1.0, sparsity: float = 0.0) -> TabularMdp:
    """Random instance with Dirichlet transition rows and uniform rewards.

    ``sparsity`` is the probability of zeroing each transition entry (at least
    one entry per row survives).
    """
    transition = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    if sparsity > 0:
        mask = rng.random(transition.shape) >= sparsity
        keep = rng.integers(n_states, size=(n_states, n_actions))
        mask[np.arange(n_states)[:, None], np.arange(n_actions)[None, :], keep] = True
        transition = transition * mask
        transition /= transition.sum(axis=2, keepdims=True)
    reward = rng.random((n_states, n_actions))
    nu0 = rng.dirichlet(np.ones(n_states))
    return TabularMdp(reward=reward, transition=transition, discount=gamma, init_dist=nu0)
