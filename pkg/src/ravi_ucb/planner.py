"""RAVI-UCB: regularized approximate value iteration with optimistic bonuses.

The main loop is generic over an estimator backend, any object providing

    begin_epoch(v) -> EpochModel
        called once per epoch with the fresh softmax value V_k; must only use
        transitions recorded before the epoch started
    record(x, a, x_next)
        called after every environment step

See ``tabular.CountEstimator`` and ``linmix.LeastSquaresEstimator``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .errors import InputError
from .mdp import (TabularMdp, _inverse_cdf, expected_next_value, sample_initial,
                  uniform_policy, validate_policy)


class RandomStream:
    """Uniform variates from a seeded PCG64 generator, handed out one at a time.

    Drawing in blocks is only a speed-up: the k-th call to ``random()``
    returns the k-th double of ``np.random.default_rng(seed)`` regardless of
    the block size.
    """

    def __init__(self, seed: int, block: int = 8192):
        self.seed = seed
        self._gen = np.random.default_rng(seed)
        self._block = block
        self._buf: list[float] = []
        self._pos = 0

    def random(self) -> float:
        if self._pos == len(self._buf):
            self._buf = self._gen.random(self._block).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u


def default_learning_rate(n_actions: int, horizon: float, T: int) -> float:
    """eta = sqrt(2 log|A| / (H^2 T))."""
    if n_actions < 2:
        raise InputError("the default learning rate needs at least two actions")
    if T < 1:
        raise InputError("T must be a positive integer")
    return math.sqrt(2.0 * math.log(n_actions) / (horizon ** 2 * T))


@dataclass(frozen=True)
class PlannerConfig:
    horizon_T: int
    eta: Optional[float] = None
    delta: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if int(self.horizon_T) != self.horizon_T or self.horizon_T < 1:
            raise InputError(f"horizon_T must be a positive integer, got {self.horizon_T}")
        if self.eta is not None and not self.eta > 0:
            raise InputError(f"eta must be positive, got {self.eta}")
        if self.delta is not None and not 0 < self.delta < 1:
            raise InputError(f"delta must lie in (0, 1), got {self.delta}")

    def learning_rate(self, mdp: TabularMdp) -> float:
        if self.eta is not None:
            return float(self.eta)
        return default_learning_rate(mdp.n_actions, mdp.horizon, self.horizon_T)

    def confidence(self) -> float:
        return float(self.delta) if self.delta is not None else 1.0 / self.horizon_T


def softmax_update(pi_prev, q, eta: float):
    """One mirror-descent step: V(x) = (1/eta) log sum_a pi_prev(a|x) e^{eta Q(x,a)}.

    Returns (V, pi_new) with pi_new(a|x) = pi_prev(a|x) e^{eta (Q(x,a) - V(x))}.
    """
    if not eta > 0:
        raise InputError("eta must be positive")
    pi_prev = np.asarray(pi_prev, dtype=float)
    q = np.asarray(q, dtype=float)
    if pi_prev.shape != q.shape:
        raise InputError(f"policy shape {pi_prev.shape} != Q shape {q.shape}")
    support = pi_prev > 0
    m = np.where(support, q, -np.inf).max(axis=1)
    z = np.where(support, eta * (q - m[:, None]), 0.0)
    # log1p/expm1 keep V accurate when eta * (Q - max Q) is tiny
    v = m + np.log1p((pi_prev * np.expm1(z)).sum(axis=1)) / eta
    pi_new = pi_prev * np.exp(np.where(support, eta * (q - v[:, None]), 0.0))
    pi_new /= pi_new.sum(axis=1, keepdims=True)
    return v, pi_new


def optimistic_backup(reward, cb, estimated_pv, gamma: float, horizon: float) -> np.ndarray:
    """Pi_H[r + CB + gamma * (P_hat V)], clamped entrywise to [0, H]."""
    reward = np.asarray(reward, dtype=float)
    cb = np.asarray(cb, dtype=float)
    estimated_pv = np.asarray(estimated_pv, dtype=float)
    if not reward.shape == cb.shape == estimated_pv.shape:
        raise InputError("reward, bonus and estimated backup shapes differ")
    if cb.min() < 0:
        raise InputError("exploration bonuses must be nonnegative")
    return np.clip(reward + cb + gamma * estimated_pv, 0.0, horizon)


class EpochModel(NamedTuple):
    estimated_pv: np.ndarray   # (P_hat_k V_k)(x, a)
    bonus: np.ndarray          # CB_k(x, a)
    summary: dict              # backend-specific snapshot arrays


class KnownModelEstimator:
    """Backend that uses the true kernel and a fixed bonus table (zero by default)."""

    def __init__(self, mdp: TabularMdp, bonus=None):
        self.mdp = mdp
        if bonus is None:
            bonus = np.zeros((mdp.n_states, mdp.n_actions))
        self.bonus = np.asarray(bonus, dtype=float)

    def begin_epoch(self, v) -> EpochModel:
        return EpochModel(expected_next_value(self.mdp, v), self.bonus.copy(), {})

    def record(self, x, a, x_next) -> None:
        pass


@dataclass
class EpochRecord:
    k: int
    start: int                  # T_k, 1-based
    length: int
    q: np.ndarray               # Q_k, input of the softmax step
    v: np.ndarray               # V_k
    policy: np.ndarray          # pi_k
    bonus: np.ndarray           # CB_k
    estimated_pv: np.ndarray    # P_hat_k V_k
    q_next: np.ndarray          # Q_{k+1}
    summary: dict = field(default_factory=dict)


@dataclass
class RunLog:
    T: int
    gamma: float
    horizon: float
    eta: float
    pi0: np.ndarray
    reward: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    resets: np.ndarray
    epoch_of_step: np.ndarray
    epochs: list[EpochRecord]

    @property
    def n_epochs(self) -> int:
        return len(self.epochs)

    @property
    def rewards(self) -> np.ndarray:
        return self.reward[self.states, self.actions]

    def epoch_lengths(self) -> np.ndarray:
        return np.array([e.length for e in self.epochs], dtype=int)

    def completed_epoch_lengths(self) -> np.ndarray:
        """Lengths of epochs that ended with a reset (the final epoch is cut by T)."""
        lengths = self.epoch_lengths()
        return lengths if self.resets[-1] else lengths[:-1]

    def write_trace_csv(self, path) -> None:
        rewards = self.rewards
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "epoch", "state", "action", "reward", "reset"])
            for i in range(self.T):
                w.writerow([i + 1, int(self.epoch_of_step[i]), int(self.states[i]),
                            int(self.actions[i]), repr(float(rewards[i])), int(self.resets[i])])

    def epochs_document(self) -> dict:
        def arr(a):
            return np.asarray(a).tolist()
        return {
            "T": self.T,
            "gamma": self.gamma,
            "eta": self.eta,
            "pi0": arr(self.pi0),
            "epochs": [
                {"k": e.k, "T_k": e.start, "length": e.length, "V": arr(e.v),
                 "policy": arr(e.policy), "CB": arr(e.bonus), "Q": arr(e.q),
                 "Q_next": arr(e.q_next), "PV_hat": arr(e.estimated_pv),
                 **{key: arr(val) for key, val in e.summary.items()}}
                for e in self.epochs
            ],
        }

    def write_epochs_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.epochs_document()), encoding="utf-8")

    @classmethod
    def read(cls, trace_path, epochs_path, reward) -> "RunLog":
        """Rebuild a log from ``write_trace_csv`` / ``write_epochs_json`` output."""
        with open(trace_path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        doc = json.loads(Path(epochs_path).read_text(encoding="utf-8"))
        core = {"k", "T_k", "length", "V", "policy", "CB", "Q", "Q_next", "PV_hat"}
        epochs = [
            EpochRecord(k=e["k"], start=e["T_k"], length=e["length"], q=np.array(e["Q"]),
                        v=np.array(e["V"]), policy=np.array(e["policy"]),
                        bonus=np.array(e["CB"]), estimated_pv=np.array(e["PV_hat"]),
                        q_next=np.array(e["Q_next"]),
                        summary={k: np.array(v) for k, v in e.items() if k not in core})
            for e in doc["epochs"]
        ]
        gamma = doc["gamma"]
        return cls(T=doc["T"], gamma=gamma, horizon=1.0 / (1.0 - gamma), eta=doc["eta"],
                   pi0=np.array(doc["pi0"]), reward=np.asarray(reward, dtype=float),
                   states=np.array([int(r["state"]) for r in rows], dtype=int),
                   actions=np.array([int(r["action"]) for r in rows], dtype=int),
                   resets=np.array([r["reset"] == "1" for r in rows], dtype=bool),
                   epoch_of_step=np.array([int(r["epoch"]) for r in rows], dtype=int),
                   epochs=epochs)


def run_ravi_ucb(mdp: TabularMdp, estimator, config: PlannerConfig, rng=None,
                 pi0=None) -> RunLog:
    """Run Algorithm RAVI-UCB for ``config.horizon_T`` environment steps.

    Per step the random stream is consumed in the order: action draw,
    transition draw, reset coin, reset-state draw (only if the coin fired).
    The coin drawn after the final step is ignored.
    """
    T = config.horizon_T
    if rng is None:
        rng = RandomStream(config.seed)
    n_states, n_actions = mdp.n_states, mdp.n_actions
    gamma, horizon = mdp.discount, mdp.horizon
    eta = config.learning_rate(mdp)
    pi = uniform_policy(n_states, n_actions) if pi0 is None else validate_policy(mdp, pi0)
    pi_start = pi.copy()

    states = np.empty(T, dtype=int)
    actions = np.empty(T, dtype=int)
    resets = np.zeros(T, dtype=bool)
    epoch_of_step = np.empty(T, dtype=int)
    epochs: list[EpochRecord] = []
    next_cdf = mdp._cdf_rows
    reset_prob = 1.0 - gamma
    draw = rng.random

    q = np.zeros((n_states, n_actions))   # Q_1 = E V_0 with V_0 = 0
    x = sample_initial(mdp, rng)
    t = 0   # steps taken so far; the next step is time index t + 1
    while t < T:
        k = len(epochs) + 1
        start = t
        v, pi_k = softmax_update(pi, q, eta)
        np.clip(v, 0.0, horizon, out=v)
        model = estimator.begin_epoch(v)
        if model.bonus.shape != (n_states, n_actions):
            raise InputError("estimator bonus table has the wrong shape")
        q_next = optimistic_backup(mdp.reward, model.bonus, model.estimated_pv, gamma, horizon)

        policy_cdf = np.cumsum(pi_k, axis=1).tolist()
        while True:
            a = _inverse_cdf(policy_cdf[x], draw())
            y = _inverse_cdf(next_cdf[x][a], draw())
            estimator.record(x, a, y)
            states[t] = x
            actions[t] = a
            epoch_of_step[t] = k
            t += 1
            coin = draw() < reset_prob
            if t == T:
                break
            if coin:
                resets[t - 1] = True
                x = sample_initial(mdp, rng)
                break
            x = y

        epochs.append(EpochRecord(k=k, start=start + 1, length=t - start, q=q, v=v,
                                  policy=pi_k, bonus=model.bonus,
                                  estimated_pv=model.estimated_pv, q_next=q_next,
                                  summary=model.summary))
        pi, q = pi_k, q_next

    return RunLog(T=T, gamma=gamma, horizon=horizon, eta=eta, pi0=pi_start,
                  reward=mdp.reward, states=states, actions=actions, resets=resets,
                  epoch_of_step=epoch_of_step, epochs=epochs)


def online_to_batch_select(log: RunLog, rng, weighting: str = "epoch") -> np.ndarray:
    """Return pi_U for a random epoch U.

    ``weighting="epoch"`` draws U uniformly over epochs; ``"steps"`` draws it
    proportionally to epoch length, i.e. the epoch of a uniform time index.
    """
    if not log.epochs:
        raise InputError("run log has no epochs")
    u = rng.random()
    if weighting == "epoch":
        idx = min(int(u * len(log.epochs)), len(log.epochs) - 1)
    elif weighting == "steps":
        idx = int(log.epoch_of_step[min(int(u * log.T), log.T - 1)]) - 1
    else:
        raise InputError(f"unknown weighting {weighting!r}")
    return log.epochs[idx].policy
