import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ravi_ucb.errors import InputError
from ravi_ucb.mdp import expected_next_value, random_mdp, uniform_policy
from ravi_ucb.planner import (EpochModel, EpochRecord, KnownModelEstimator, PlannerConfig,
                              RandomStream, RunLog, default_learning_rate,
                              online_to_batch_select, optimistic_backup, run_ravi_ucb,
                              softmax_update)


def desk_mdp(seed=0, gamma=0.8, n_states=4, n_actions=3):
    return random_mdp(n_states, n_actions, gamma, np.random.default_rng(seed))


def synthetic_log(lengths, n_states=2, n_actions=2):
    """RunLog with hand-made epochs of the given lengths and distinct point-mass policies."""
    T = int(sum(lengths))
    epochs, epoch_of_step, resets = [], [], []
    start = 1
    for k, length in enumerate(lengths, 1):
        pi = np.zeros((n_states, n_actions))
        pi[:, k % n_actions] = 1.0
        zeros = np.zeros((n_states, n_actions))
        epochs.append(EpochRecord(k=k, start=start, length=length, q=zeros, v=np.zeros(n_states),
                                  policy=pi, bonus=zeros, estimated_pv=zeros, q_next=zeros))
        epoch_of_step += [k] * length
        resets += [False] * (length - 1) + [True]
        start += length
    return RunLog(T=T, gamma=0.5, horizon=2.0, eta=0.1, pi0=uniform_policy(n_states, n_actions),
                  reward=np.zeros((n_states, n_actions)), states=np.zeros(T, dtype=int),
                  actions=np.zeros(T, dtype=int), resets=np.array(resets),
                  epoch_of_step=np.array(epoch_of_step), epochs=epochs)


class TestLearningRate:
    def test_unit_case(self):
        assert default_learning_rate(2, 1.0, 2 * math.log(2)) == pytest.approx(1.0)

    def test_reference_value(self):
        assert default_learning_rate(4, 10.0, 10_000) == pytest.approx(1.6651e-3, rel=1e-4)
        assert default_learning_rate(4, 10.0, 10_000) == pytest.approx(
            math.sqrt(2 * math.log(4) / 1e6), rel=1e-14)

    def test_doubling_T(self):
        a = default_learning_rate(3, 4.0, 1000)
        b = default_learning_rate(3, 4.0, 2000)
        assert a / b == pytest.approx(math.sqrt(2), rel=1e-14)

    def test_single_action_rejected(self):
        with pytest.raises(InputError):
            default_learning_rate(1, 2.0, 100)

    def test_config_defaults(self):
        mdp = desk_mdp()
        cfg = PlannerConfig(1000)
        assert cfg.learning_rate(mdp) == default_learning_rate(3, mdp.horizon, 1000)
        assert cfg.confidence() == 1e-3
        assert PlannerConfig(1000, eta=0.5).learning_rate(mdp) == 0.5

    @pytest.mark.parametrize("kw", [{"eta": 0.0}, {"delta": 1.0}, {"delta": 0.0}])
    def test_config_validation(self, kw):
        with pytest.raises(InputError):
            PlannerConfig(100, **kw)

    def test_config_rejects_bad_T(self):
        with pytest.raises(InputError):
            PlannerConfig(0)


class TestSoftmaxUpdate:
    def test_constant_q(self):
        rng = np.random.default_rng(0)
        pi = rng.dirichlet(np.ones(3), size=4)
        q = np.repeat(rng.random(4)[:, None], 3, axis=1)
        v, new = softmax_update(pi, q, 0.7)
        np.testing.assert_allclose(v, q[:, 0], atol=1e-14)
        np.testing.assert_allclose(new, pi, atol=1e-14)

    def test_point_mass(self):
        pi = np.array([[0.0, 1.0, 0.0]])
        q = np.array([[5.0, 2.0, 9.0]])
        v, new = softmax_update(pi, q, 3.0)
        assert v[0] == pytest.approx(2.0)
        np.testing.assert_array_equal(new, pi)

    def test_closed_form(self):
        v, new = softmax_update([[0.5, 0.5]], [[0.0, 1.0]], 1.0)
        assert v[0] == pytest.approx(0.6201145, abs=1e-7)
        assert v[0] == pytest.approx(math.log((1 + math.e) / 2), rel=1e-14)
        np.testing.assert_allclose(new[0], [1 / (1 + math.e), math.e / (1 + math.e)])

    def test_large_eta_no_overflow(self):
        v, new = softmax_update([[0.5, 0.5]], [[0.0, 1000.0]], 10.0)
        assert np.isfinite(v).all() and np.isfinite(new).all()
        assert v[0] == pytest.approx(1000.0 - math.log(2) / 10.0)

    def test_tiny_eta_accuracy(self):
        # log1p/expm1 path: V is pi-weighted mean plus O(eta) variance term
        eta = 1e-9
        q = np.array([[0.3, 0.9]])
        v, _ = softmax_update([[0.25, 0.75]], q, eta)
        mean = 0.25 * 0.3 + 0.75 * 0.9
        var = 0.25 * 0.3 ** 2 + 0.75 * 0.9 ** 2 - mean ** 2
        assert v[0] == pytest.approx(mean + eta * var / 2, abs=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            softmax_update(np.full((2, 2), 0.5), np.zeros((2, 3)), 1.0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.floats(1e-4, 50.0))
    def test_properties(self, seed, eta):
        rng = np.random.default_rng(seed)
        pi = rng.dirichlet(np.full(4, 0.5), size=3)
        pi[0, 1] = 0.0
        pi[0] /= pi[0].sum()
        q = rng.random((3, 4)) * 5
        v, new = softmax_update(pi, q, eta)
        np.testing.assert_allclose(new.sum(axis=1), 1.0, atol=1e-12)
        assert new[0, 1] == 0.0
        support = pi > 0
        lo = np.where(support, q, np.inf).min(axis=1)
        hi = np.where(support, q, -np.inf).max(axis=1)
        assert np.all(v >= lo - 1e-12) and np.all(v <= hi + 1e-12)
        # V is the pi-weighted log-sum-exp
        ref = np.log((pi * np.exp(eta * (q - hi[:, None]))).sum(axis=1)) / eta + hi
        np.testing.assert_allclose(v, ref, rtol=1e-10, atol=1e-10)


class TestOptimisticBackup:
    def test_saturates(self):
        gamma = 0.75
        H = 1 / (1 - gamma)
        q = optimistic_backup(np.ones((1, 1)), np.zeros((1, 1)), np.full((1, 1), H), gamma, H)
        assert q[0, 0] == H

    def test_zero(self):
        z = np.zeros((2, 2))
        assert not optimistic_backup(z, z, z, 0.5, 2.0).any()

    def test_hand_arithmetic(self):
        q = optimistic_backup([[0.5]], [[0.2]], [[1.0]], 0.9, 10.0)
        assert q[0, 0] == pytest.approx(1.6)

    def test_clamps_below(self):
        q = optimistic_backup([[0.0]], [[0.0]], [[-3.0]], 0.5, 2.0)
        assert q[0, 0] == 0.0

    def test_negative_bonus(self):
        with pytest.raises(InputError):
            optimistic_backup([[0.5]], [[-0.1]], [[1.0]], 0.9, 10.0)

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            optimistic_backup(np.zeros((2, 2)), np.zeros((2, 1)), np.zeros((2, 2)), 0.5, 2.0)


class TestRandomStream:
    @pytest.mark.parametrize("block", [1, 3, 7, 8192])
    def test_block_invariance(self, block):
        ref = np.random.default_rng(2024).random(100)
        stream = RandomStream(2024, block=block)
        np.testing.assert_array_equal([stream.random() for _ in range(100)], ref)


def replay_run(mdp, T, seed, eta):
    """Independent re-implementation of the sampling loop with the true model and zero bonus."""
    gen = np.random.default_rng(seed)
    u = lambda: float(gen.random())

    def inverse_cdf(p, draw):
        return min(int(np.searchsorted(np.cumsum(p), draw, side="right")), len(p) - 1)

    H = mdp.horizon
    pi = uniform_policy(mdp.n_states, mdp.n_actions)
    q = np.zeros_like(pi)
    x = inverse_cdf(mdp.init_dist, u())
    states, actions, lengths = [], [], []
    t = 0
    while t < T:
        w = pi * np.exp(eta * (q - q.max(axis=1, keepdims=True)))
        v = np.log(w.sum(axis=1)) / eta + q.max(axis=1)
        pi = w / w.sum(axis=1, keepdims=True)
        q = np.clip(mdp.reward + mdp.discount * expected_next_value(mdp, np.clip(v, 0, H)), 0, H)
        n = 0
        while True:
            a = inverse_cdf(pi[x], u())
            y = inverse_cdf(mdp.transition[x, a], u())
            states.append(x)
            actions.append(a)
            t += 1
            n += 1
            coin = u() < 1 - mdp.discount
            if t == T:
                break
            if coin:
                x = inverse_cdf(mdp.init_dist, u())
                break
            x = y
        lengths.append(n)
    return np.array(states), np.array(actions), np.array(lengths)


class TestRun:
    def test_matches_independent_replay(self):
        mdp = desk_mdp(1, gamma=0.7)
        eta = 0.3
        log = run_ravi_ucb(mdp, KnownModelEstimator(mdp), PlannerConfig(3000, eta=eta, seed=5))
        states, actions, lengths = replay_run(mdp, 3000, 5, eta)
        np.testing.assert_array_equal(log.states, states)
        np.testing.assert_array_equal(log.actions, actions)
        np.testing.assert_array_equal(log.epoch_lengths(), lengths)

    def test_epochs_partition(self):
        mdp = desk_mdp(2)
        log = run_ravi_ucb(mdp, KnownModelEstimator(mdp), PlannerConfig(2000, seed=1))
        assert len(log.states) == 2000
        starts = [e.start for e in log.epochs]
        assert starts[0] == 1
        assert all(a.start + a.length == b.start for a, b in zip(log.epochs, log.epochs[1:]))
        assert log.epochs[-1].start + log.epochs[-1].length - 1 == 2000
        # every epoch but possibly the last ends with a reset
        ends = np.cumsum(log.epoch_lengths()) - 1
        assert log.resets[ends[:-1]].all()
        assert log.resets.sum() in (log.n_epochs - 1, log.n_epochs)
        np.testing.assert_array_equal(np.bincount(log.epoch_of_step)[1:], log.epoch_lengths())

    def test_values_truncated(self):
        mdp = desk_mdp(3)
        bonus = np.full((4, 3), 10.0)
        log = run_ravi_ucb(mdp, KnownModelEstimator(mdp, bonus), PlannerConfig(500, seed=2))
        H = mdp.horizon
        for e in log.epochs:
            assert 0 <= e.q.min() and e.q.max() <= H
            assert 0 <= e.v.min() and e.v.max() <= H
            assert 0 <= e.q_next.min() and e.q_next.max() <= H
            np.testing.assert_allclose(e.policy.sum(axis=1), 1.0, atol=1e-12)
        # bonus larger than H saturates every backup
        assert all((e.q_next == H).all() for e in log.epochs)

    def test_small_gamma_epoch_length(self):
        mdp = desk_mdp(4, gamma=0.01)
        log = run_ravi_ucb(mdp, KnownModelEstimator(mdp), PlannerConfig(10_200, seed=3))
        lengths = log.completed_epoch_lengths()
        assert lengths.size >= 10_000
        assert abs(lengths.mean() - mdp.horizon) <= 0.05 * mdp.horizon

    def test_zero_bonus_true_model_lower_equality(self):
        mdp = desk_mdp(5)
        log = run_ravi_ucb(mdp, KnownModelEstimator(mdp), PlannerConfig(500, seed=4))
        for e in log.epochs:
            lower = mdp.reward + mdp.discount * expected_next_value(mdp, e.v)
            np.testing.assert_allclose(e.q_next, np.clip(lower, 0, mdp.horizon), atol=1e-12)
            np.testing.assert_allclose(e.q_next, lower, atol=1e-12)

    def test_chained_epochs(self):
        mdp = desk_mdp(6)
        log = run_ravi_ucb(mdp, KnownModelEstimator(mdp), PlannerConfig(300, seed=5))
        assert not log.epochs[0].q.any()
        for prev, cur in zip(log.epochs, log.epochs[1:]):
            np.testing.assert_array_equal(cur.q, prev.q_next)
            v, pi = softmax_update(prev.policy, cur.q, log.eta)
            np.testing.assert_allclose(cur.policy, pi, atol=1e-15)

    def test_deterministic(self):
        mdp = desk_mdp(7)
        logs = [run_ravi_ucb(mdp, KnownModelEstimator(mdp), PlannerConfig(1000, seed=11))
                for _ in range(2)]
        np.testing.assert_array_equal(logs[0].states, logs[1].states)
        np.testing.assert_array_equal(logs[0].actions, logs[1].actions)
        assert all(np.array_equal(a.policy, b.policy) for a, b in zip(logs[0].epochs, logs[1].epochs))

    def test_custom_initial_policy(self):
        mdp = desk_mdp(8)
        pi0 = np.tile([1.0, 0.0, 0.0], (4, 1))
        log = run_ravi_ucb(mdp, KnownModelEstimator(mdp), PlannerConfig(200, eta=1.0, seed=0), pi0=pi0)
        assert (log.actions == 0).all()

    def test_bad_estimator_shape(self):
        mdp = desk_mdp(9)

        class Broken:
            def begin_epoch(self, v):
                return EpochModel(np.zeros((4, 3)), np.zeros((2, 2)), {})

            def record(self, x, a, y):
                pass

        with pytest.raises(InputError):
            run_ravi_ucb(mdp, Broken(), PlannerConfig(10))

    def test_estimator_sees_only_past_data(self):
        mdp = desk_mdp(10)

        class Spy(KnownModelEstimator):
            def __init__(self, mdp):
                super().__init__(mdp)
                self.recorded = 0
                self.seen = []

            def begin_epoch(self, v):
                self.seen.append(self.recorded)
                return super().begin_epoch(v)

            def record(self, x, a, y):
                self.recorded += 1

        spy = Spy(mdp)
        log = run_ravi_ucb(mdp, spy, PlannerConfig(400, seed=1))
        assert spy.seen == [e.start - 1 for e in log.epochs]


class TestRunLogIO:
    def test_round_trip(self, tmp_path):
        mdp = desk_mdp(11)
        log = run_ravi_ucb(mdp, KnownModelEstimator(mdp), PlannerConfig(300, seed=2))
        log.write_trace_csv(tmp_path / "trace.csv")
        log.write_epochs_json(tmp_path / "epochs.json")
        with open(tmp_path / "trace.csv") as fh:
            assert next(csv.reader(fh)) == ["t", "epoch", "state", "action", "reward", "reset"]
        doc = json.loads((tmp_path / "epochs.json").read_text())
        assert {"k", "T_k", "V", "policy", "CB"} <= set(doc["epochs"][0])
        back = RunLog.read(tmp_path / "trace.csv", tmp_path / "epochs.json", mdp.reward)
        np.testing.assert_array_equal(back.states, log.states)
        np.testing.assert_array_equal(back.resets, log.resets)
        np.testing.assert_array_equal(back.rewards, log.rewards)
        for a, b in zip(back.epochs, log.epochs):
            np.testing.assert_array_equal(a.policy, b.policy)
            np.testing.assert_array_equal(a.q_next, b.q_next)
            assert a.start == b.start and a.length == b.length


class TestOnlineToBatch:
    def test_single_epoch(self):
        log = synthetic_log([5])
        assert online_to_batch_select(log, np.random.default_rng(0)) is log.epochs[0].policy

    def test_uniform_frequency(self):
        log = synthetic_log([1, 2, 3, 4, 5, 6, 7, 8, 9, 10])
        rng = np.random.default_rng(1)
        index = {id(e.policy): e.k for e in log.epochs}
        n = 10_000
        counts = np.bincount([index[id(online_to_batch_select(log, rng))] for _ in range(n)],
                             minlength=11)[1:]
        sigma = math.sqrt(n * 0.1 * 0.9)
        assert np.all(np.abs(counts - n * 0.1) <= 4 * sigma)

    def test_step_weighting(self):
        log = synthetic_log([1, 9])
        rng = np.random.default_rng(2)
        n = 10_000
        hits = sum(online_to_batch_select(log, rng, "steps") is log.epochs[1].policy for _ in range(n))
        assert abs(hits / n - 0.9) <= 4 * math.sqrt(0.09 / n)

    def test_returns_valid_policy(self):
        log = synthetic_log([2, 3])
        pi = online_to_batch_select(log, np.random.default_rng(3))
        np.testing.assert_allclose(pi.sum(axis=1), 1.0)
        assert pi.min() >= 0

    def test_empty_log(self):
        log = synthetic_log([2])
        log.epochs = []
        with pytest.raises(InputError):
            online_to_batch_select(log, np.random.default_rng(0))

    def test_unknown_weighting(self):
        with pytest.raises(InputError):
            online_to_batch_select(synthetic_log([2]), np.random.default_rng(0), "bogus")
