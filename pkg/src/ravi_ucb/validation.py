"""Independent numerical checks for recorded RAVI-UCB runs and synthetic instances.

Every check returns a ``CheckReport`` whose ``passed`` flag is exactly
``worst_slack <= tolerance``.  Statistical checks use fixed 3-sigma bands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .errors import InputError
from .mdp import (TabularMdp, conditional_relative_entropy, expected_next_value, greedy_policy,
                  normalized_return, occupancy_measure, occupancy_kl, value_iteration)
from .planner import PlannerConfig, RunLog, online_to_batch_select, run_ravi_ucb

MAX_DETAIL_ROWS = 50


@dataclass
class CheckReport:
    check: str
    worst_slack: float
    tolerance: float
    details: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.worst_slack <= self.tolerance)

    def to_dict(self) -> dict:
        return {"check": self.check, "pass": self.passed,
                "worst_slack": float(self.worst_slack), "details": self.details}

    def line(self) -> str:
        return (f"[{'PASS' if self.passed else 'FAIL'}] {self.check}: worst slack "
                f"{self.worst_slack:.3e} (tolerance {self.tolerance:.1e})")


# -- exact regret oracles -----------------------------------------------------

def optimal_return(mdp: TabularMdp) -> float:
    """<mu*, r> from the greedy policy of a tightly converged value iteration."""
    _, q = value_iteration(mdp, tol=1e-12)
    return normalized_return(mdp, greedy_policy(q))


def epoch_gaps(mdp: TabularMdp, log: RunLog, optimum: float | None = None) -> np.ndarray:
    """<mu* - mu^{pi_k}, r> for every epoch; one occupancy solve per distinct policy."""
    if optimum is None:
        optimum = optimal_return(mdp)
    cache: dict[bytes, float] = {}
    gaps = np.empty(log.n_epochs)
    for i, e in enumerate(log.epochs):
        key = e.policy.tobytes()
        if key not in cache:
            cache[key] = optimum - normalized_return(mdp, e.policy)
        gaps[i] = cache[key]
    return gaps


def cumulative_regret(mdp: TabularMdp, log: RunLog, optimum: float | None = None) -> float:
    return float(epoch_gaps(mdp, log, optimum) @ log.epoch_lengths())


def _summarize(rows: list[dict]) -> list[dict]:
    return rows[:MAX_DETAIL_ROWS]


# -- per-run checks -------------------------------------------------------------

def validity_slacks(log: RunLog, mdp: TabularMdp, estimated_pv=None) -> np.ndarray:
    """Per-epoch max over (x,a) of gamma |(P - P_hat_k) V_k| - CB_k."""
    if estimated_pv is None:
        estimated_pv = [e.estimated_pv for e in log.epochs]
    if len(estimated_pv) != len(log.epochs):
        raise InputError("need one estimated backup table per epoch")
    return np.array([
        (mdp.discount * np.abs(expected_next_value(mdp, e.v) - pv) - e.bonus).max()
        for e, pv in zip(log.epochs, estimated_pv)
    ])


def check_validity(log: RunLog, mdp: TabularMdp, estimated_pv=None) -> CheckReport:
    slacks = validity_slacks(log, mdp, estimated_pv)
    bad = np.flatnonzero(slacks > 0)
    details = [{"epochs": len(slacks), "violating_epochs": int(bad.size)}]
    details += [{"k": log.epochs[i].k, "slack": float(slacks[i])} for i in bad]
    return CheckReport("validity", float(slacks.max()), 0.0, _summarize(details))


def check_sandwich(log: RunLog, mdp: TabularMdp, only_valid: bool = True,
                   tol: float = 1e-9) -> CheckReport:
    """r + gamma P V_k <= Q_{k+1} <= r + 2 CB_k + gamma P V_k on valid epochs."""
    valid = validity_slacks(log, mdp) <= 0
    worst, checked, rows = -math.inf, 0, []
    for e, ok in zip(log.epochs, valid):
        if only_valid and not ok:
            continue
        lower = mdp.reward + mdp.discount * expected_next_value(mdp, e.v)
        upper = lower + 2.0 * e.bonus
        slack = max((lower - e.q_next).max(), (e.q_next - upper).max())
        worst = max(worst, slack)
        checked += 1
        if slack > tol:
            rows.append({"k": e.k, "slack": float(slack)})
    if checked == 0:
        worst = 0.0
    return CheckReport("sandwich", float(worst), tol,
                       _summarize([{"epochs_checked": checked}] + rows))


def _simplex_candidates(n_actions: int, n: int, rng) -> np.ndarray:
    return rng.dirichlet(np.ones(n_actions), size=n)


def check_md_identity(log: RunLog, rng, n_candidates: int = 10_000, tol: float = 1e-9,
                      telescope_tol: float = 1e-6) -> CheckReport:
    """KL-regularized-max characterization of (V_k, pi_k) and its telescoped form.

    Slack is reported relative to each tolerance, so the check passes iff both
    parts are within their own tolerance.
    """
    eta = log.eta
    n_actions = log.pi0.shape[1]
    cand = _simplex_candidates(n_actions, n_candidates, rng)
    cand_ent = (cand * np.log(cand)).sum(axis=1)
    worst_dom = worst_eq = worst_tel = -math.inf
    rows = []
    prev = log.pi0
    q_sum = np.zeros_like(log.pi0)
    v_sum = np.zeros(log.pi0.shape[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        log_pi0 = np.log(log.pi0)
        for e in log.epochs:
            log_prev = np.log(prev)
            # candidates are strictly positive, so -inf entries only yield -inf objectives
            objective = cand @ e.q.T - (cand_ent[:, None] - cand @ log_prev.T) / eta
            dom = (objective.max(axis=0) - e.v).max()

            pk = e.policy
            kl = np.where(pk > 0, pk * (np.log(pk) - log_prev), 0.0).sum(axis=1)
            eq = np.abs((pk * e.q).sum(axis=1) - kl / eta - e.v).max()

            q_sum += e.q
            v_sum += e.v
            oracle = logsumexp(log_pi0 + eta * q_sum, axis=1) / eta
            tel = np.abs(v_sum - oracle).max()

            worst_dom, worst_eq, worst_tel = max(worst_dom, dom), max(worst_eq, eq), max(worst_tel, tel)
            if dom > tol or eq > tol or tel > telescope_tol:
                rows.append({"k": e.k, "dominance": float(dom), "equality": float(eq),
                             "telescoped": float(tel)})
            prev = pk
    summary = {"epochs": log.n_epochs, "candidates": n_candidates,
               "max_dominance_gap": float(worst_dom), "max_equality_gap": float(worst_eq),
               "max_telescoped_gap": float(worst_tel)}
    # normalize both parts onto the 1e-9 scale so a single tolerance applies
    worst = max(worst_dom, worst_eq, worst_tel * (tol / telescope_tol))
    return CheckReport("md_identity", float(worst), tol, _summarize([summary] + rows))


def check_kl_chain(mdp: TabularMdp, pi, pi_ref, tol: float = 1e-9) -> CheckReport:
    """KL(mu^pi || mu^pi') <= H * H(pi || pi')."""
    lhs = occupancy_kl(occupancy_measure(mdp, pi), occupancy_measure(mdp, pi_ref))
    rhs = mdp.horizon * conditional_relative_entropy(mdp, pi, pi_ref)
    return CheckReport("kl_chain", lhs - rhs, tol, [{"lhs": lhs, "rhs": rhs}])


def _mixture_trace(log: RunLog):
    """Pairs (epoch record, ||phi_{k,t}||_{Lambda_k^-1} for every step t of the epoch)."""
    if not log.epochs or "feature_norms" not in log.epochs[0].summary:
        raise InputError("run log has no linear-mixture snapshots")
    out = []
    for e in log.epochs:
        lo = e.start - 1
        xs = log.states[lo:lo + e.length]
        acts = log.actions[lo:lo + e.length]
        out.append((e, e.summary["feature_norms"][xs, acts]))
    return out


def _potential_cap(log: RunLog, bound_B: float, reg_lambda: float, d: int) -> float:
    return d * math.log1p(bound_B ** 2 * log.horizon ** 2 * log.T / (reg_lambda * d))


def _design_params(log: RunLog, reg_lambda):
    if not log.epochs or "Lambda" not in log.epochs[0].summary:
        raise InputError("run log has no linear-mixture snapshots")
    lam0 = np.asarray(log.epochs[0].summary["Lambda"])
    d = lam0.shape[0]
    if reg_lambda is None:
        reg_lambda = float(lam0[0, 0])
    return d, reg_lambda


def check_elliptical(log: RunLog, bound_B: float, reg_lambda: float | None = None,
                     tol: float = 1e-6) -> CheckReport:
    """sum_k (1/|T_k|) sum_t log(1 + |T_k| ||phi_{k,t}||^2) <= d log(1 + B^2 H^2 T / (lambda d))."""
    d, reg_lambda = _design_params(log, reg_lambda)
    lhs = sum(np.log1p(e.length * norms ** 2).sum() / e.length for e, norms in _mixture_trace(log))
    rhs = _potential_cap(log, bound_B, reg_lambda, d)
    return CheckReport("elliptical_potential", float(lhs - rhs), tol,
                       [{"lhs": float(lhs), "rhs": rhs}])


def check_bad_epochs(log: RunLog, bound_B: float, reg_lambda: float | None = None) -> CheckReport:
    """#{k : some ||phi_{k,t}||_{Lambda_k^-1} >= 1} <= (d / log 2) log(1 + B^2 H^2 T / (lambda d))."""
    d, reg_lambda = _design_params(log, reg_lambda)
    count = sum(int((norms >= 1.0).any()) for _, norms in _mixture_trace(log))
    cap = _potential_cap(log, bound_B, reg_lambda, d) / math.log(2.0)
    return CheckReport("bad_epochs", float(count - cap), 0.0,
                       [{"bad_epochs": count, "cap": cap}])


def check_online_to_batch(mdp: TabularMdp, log: RunLog, trials: int, rng,
                          optimum: float | None = None, min_mixing_epochs: int = 200) -> CheckReport:
    """Randomized online-to-batch identity and the per-epoch bonus mixing identity.

    The returned policy is drawn as the epoch of a uniform time index, whose
    expected suboptimality equals R_T / T exactly; the sample mean must be
    within 3 standard errors of it.  With enough completed epochs, realized
    per-epoch bonus sums are also compared with H <mu^{pi_k}, CB_k>.
    """
    if trials < 2:
        raise InputError("need at least two resampling trials")
    gaps = epoch_gaps(mdp, log, optimum)
    target = float(gaps @ log.epoch_lengths()) / log.T
    index = {id(e.policy): i for i, e in enumerate(log.epochs)}
    draws = np.array([gaps[index[id(online_to_batch_select(log, rng, "steps"))]]
                      for _ in range(trials)])
    mean, se = float(draws.mean()), float(draws.std(ddof=1) / math.sqrt(trials))
    z_batch = _zscore(mean - target, se, scale=abs(target))
    details = [{"regret_over_T": target, "mean_suboptimality": mean, "stderr": se,
                "z": z_batch, "uniform_epoch_mean": float(gaps.mean())}]

    worst = z_batch
    completed = len(log.completed_epoch_lengths())
    if completed >= min_mixing_epochs:
        diffs = []
        for e in log.epochs[:completed]:
            lo = e.start - 1
            realized = e.bonus[log.states[lo:lo + e.length], log.actions[lo:lo + e.length]].sum()
            expected = log.horizon * float((occupancy_measure(mdp, e.policy) * e.bonus).sum())
            diffs.append(realized - expected)
        diffs = np.array(diffs)
        se_mix = diffs.std(ddof=1) / math.sqrt(len(diffs))
        z_mix = _zscore(diffs.mean(), se_mix, scale=log.horizon)
        worst = max(worst, z_mix)
        details.append({"mixing_epochs": len(diffs), "mean_difference": float(diffs.mean()),
                        "stderr": float(se_mix), "z": float(z_mix)})
    else:
        details.append({"mixing_epochs": completed, "skipped": True})
    return CheckReport("online_to_batch", float(worst - 3.0), 0.0, details)


def _zscore(diff: float, se: float, scale: float) -> float:
    # differences at round-off level count as exact agreement (constant samples give se ~ 1e-18)
    if abs(diff) <= 1e-12 * (1.0 + scale):
        return 0.0
    return abs(diff) / se if se > 0 else math.inf


# -- multi-run and synthetic checks ---------------------------------------------

def discrete_ks_geometric(samples, p: float) -> tuple[float, float]:
    """KS statistic sup_k |F_n(k) - F(k)| over the integer support, with its p-value.

    The continuous Kolmogorov tail is used for the p-value, which is
    conservative for a discrete null (the true p-value is never smaller).
    """
    samples = np.asarray(samples, dtype=int)
    if samples.size == 0 or samples.min() < 1:
        raise InputError("geometric samples must be positive integers")
    k = np.arange(1, samples.max() + 1)
    empirical = np.cumsum(np.bincount(samples, minlength=k[-1] + 1)[1:]) / samples.size
    stat = float(np.abs(empirical - stats.geom(p).cdf(k)).max())
    return stat, float(stats.kstwo.sf(stat, samples.size))


def check_epoch_schedule(logs: Iterable[RunLog], significance: float = 0.01,
                         rel_tol: float = 0.05) -> CheckReport:
    """Completed epoch lengths of all runs, pooled; see ``check_epoch_lengths``."""
    logs = list(logs)
    lengths = np.concatenate([lg.completed_epoch_lengths() for lg in logs])
    return check_epoch_lengths(lengths, logs[0].gamma, significance, rel_tol)


def check_epoch_lengths(lengths, gamma: float, significance: float = 0.01,
                        rel_tol: float = 0.05) -> CheckReport:
    """Mean within 5% of H and a KS fit to geometric(1 - gamma)."""
    lengths = np.asarray(lengths)
    horizon = 1.0 / (1.0 - gamma)
    rel_err = abs(lengths.mean() - horizon) / horizon
    ks_stat, ks_pvalue = discrete_ks_geometric(lengths, 1.0 - gamma)
    details = [{"epochs": int(lengths.size), "mean_length": float(lengths.mean()),
                "H": horizon, "relative_error": float(rel_err), "ks_statistic": ks_stat,
                "ks_pvalue": ks_pvalue}]
    # both parts mapped to "<= 0 passes"
    worst = max(rel_err - rel_tol, significance - ks_pvalue)
    return CheckReport("epoch_schedule", float(worst), 0.0, details)


def check_max_epoch(logs: Sequence[RunLog]) -> CheckReport:
    """Mean over runs of max_k |T_k| against (4 + 2 log T) / (1 - gamma)."""
    T = logs[0].T
    cap = (4.0 + 2.0 * math.log(T)) / (1.0 - logs[0].gamma)
    maxima = np.array([lg.epoch_lengths().max() for lg in logs], dtype=float)
    c_max = np.array([(lg.epoch_lengths() / np.log1p(lg.epoch_lengths())).max() for lg in logs])
    return CheckReport("max_epoch_length", float(maxima.mean() - cap), 0.0,
                       [{"runs": len(logs), "mean_max_length": float(maxima.mean()),
                         "mean_max_C": float(c_max.mean()), "cap": cap}])


def check_self_normalized(d: int, sigma: float, T: int, delta: float, trials: int, rng,
                          reg_lambda: float = 1.0) -> CheckReport:
    """Monte Carlo coverage of the self-normalized martingale bound, uniformly over t <= T.

    Features are uniform on the unit sphere scaled by U[0, 1]; noise is
    sigma * Rademacher, which is sigma-subGaussian.
    """
    lam = np.broadcast_to(reg_lambda * np.eye(d), (trials, d, d)).copy()
    s = np.zeros((trials, d))
    logdet0 = d * math.log(reg_lambda)
    covered = np.ones(trials, dtype=bool)
    for _ in range(T):
        phi = rng.standard_normal((trials, d))
        phi *= (rng.random(trials) / np.linalg.norm(phi, axis=1))[:, None]
        noise = sigma * rng.choice([-1.0, 1.0], size=trials)
        lam += phi[:, :, None] * phi[:, None, :]
        s += phi * noise[:, None]
        lhs = np.einsum("ti,ti->t", s, np.linalg.solve(lam, s[:, :, None])[:, :, 0])
        _, logdet = np.linalg.slogdet(lam)
        rhs = 2.0 * sigma ** 2 * (0.5 * (logdet - logdet0) + math.log(1.0 / delta))
        covered &= lhs <= rhs
    coverage = float(covered.mean())
    threshold = 1.0 - delta - 3.0 * math.sqrt(delta * (1.0 - delta) / trials)
    return CheckReport("self_normalized", threshold - coverage, 0.0,
                       [{"trials": trials, "coverage": coverage, "threshold": threshold}])


def loglog_slope(T_values: Sequence[int], values: Sequence[float]) -> float:
    x = np.log(np.asarray(T_values, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def check_regret_slope(mdp: TabularMdp, make_estimator: Callable[[int], object],
                       T_values: Sequence[int], seeds: Sequence[int], eta: float | None = None,
                       max_slope: float = 0.75) -> CheckReport:
    """Least-squares log-log slope of mean exact regret across horizons.

    ``make_estimator(T)`` builds a fresh backend for a run of length T.
    """
    if len(T_values) < 2:
        raise InputError("need at least two horizons to fit a slope")
    optimum = optimal_return(mdp)
    rows, means = [], []
    for T in T_values:
        regrets = np.array([
            cumulative_regret(mdp, run_ravi_ucb(mdp, make_estimator(T),
                                                PlannerConfig(T, eta=eta, seed=seed)), optimum)
            for seed in seeds
        ])
        means.append(regrets.mean())
        rows.append({"T": T, "mean_regret": float(regrets.mean()),
                     "stderr": float(regrets.std(ddof=1) / math.sqrt(len(seeds))) if len(seeds) > 1 else 0.0})
    if max(means) <= 1e-8:
        slope = 0.0
        rows.append({"note": "regret identically zero"})
    else:
        slope = loglog_slope(T_values, means)
    return CheckReport("regret_slope", slope - max_slope, 0.0, [{"slope": slope}] + rows)
