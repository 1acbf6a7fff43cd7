"""Experiment configuration, seeded runs, metrics persistence and sweeps.

Run directory layout written by ``run_experiment``::

    out_dir/config.json          resolved configuration (mdp points at mdp.json)
    out_dir/mdp.json             the instance
    out_dir/metrics.csv          one MetricsRow per seed
    out_dir/seed_<s>/trace.csv   per-step trace
    out_dir/seed_<s>/epochs.json per-epoch snapshots
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import InputError, NumericalError
from .linmix import LeastSquaresEstimator, LinearMixtureMdp, linmix_beta
from .mdp import TabularMdp
from .planner import PlannerConfig, RunLog, default_learning_rate, run_ravi_ucb
from .tabular import CountEstimator, tabular_beta
from .validation import (CheckReport, check_bad_epochs, check_elliptical, check_epoch_schedule,
                         check_kl_chain, check_md_identity, check_online_to_batch,
                         check_sandwich, check_validity, epoch_gaps, optimal_return,
                         validity_slacks, loglog_slope)

BACKENDS = ("tabular", "linmix")
CONFIG_KEYS = {"mdp", "backend", "T", "seeds", "eta", "beta", "lambda", "delta", "out_dir"}
METRICS_HEADER = ["seed", "T", "regret", "mean_epoch_len", "K", "validity_violations", "seconds"]
SWEEP_HEADER = ["T", "mean_regret", "stderr", "slope"]
REGRET_FLOOR = -1e-8
MIN_SCHEDULE_EPOCHS = 1000

AnyMdp = Union[TabularMdp, LinearMixtureMdp]


@dataclass
class ExperimentConfig:
    """Validated experiment description with every default resolved.

    ``explicit`` names the tuning keys set by the user; the rest are
    recomputed whenever T changes (see ``with_horizon``).
    """

    mdp: AnyMdp
    backend: str
    T: int
    seeds: list[int]
    eta: float
    beta: float
    reg_lambda: float
    delta: float
    out_dir: Path
    explicit: frozenset = field(default_factory=frozenset)

    @property
    def tabular(self) -> TabularMdp:
        return self.mdp.base if isinstance(self.mdp, LinearMixtureMdp) else self.mdp

    def with_horizon(self, T: int, out_dir=None) -> "ExperimentConfig":
        doc = {key: getattr(self, attr) for key, attr in _OVERRIDES.items() if key in self.explicit}
        eta, beta, reg_lambda, delta = _resolve_tuning(self.mdp, self.backend, T, doc)
        return replace(self, T=T, eta=eta, beta=beta, reg_lambda=reg_lambda, delta=delta,
                       out_dir=Path(out_dir) if out_dir is not None else self.out_dir)

    def make_estimator(self):
        mdp = self.tabular
        if self.backend == "tabular":
            return CountEstimator(mdp.n_states, mdp.n_actions, self.beta, mdp.horizon)
        return LeastSquaresEstimator(self.mdp.psi, self.beta, mdp.horizon, self.reg_lambda)

    def to_dict(self, mdp_ref="mdp.json") -> dict:
        """Document for ``out_dir/config.json``; paths are relative to that file."""
        doc = {"mdp": mdp_ref, "backend": self.backend, "T": self.T, "seeds": list(self.seeds),
               "eta": self.eta, "beta": self.beta, "delta": self.delta, "out_dir": "."}
        if self.backend == "linmix":
            doc["lambda"] = self.reg_lambda
        return doc


_OVERRIDES = {"eta": "eta", "beta": "beta", "lambda": "reg_lambda", "delta": "delta"}


@dataclass
class MetricsRow:
    seed: int
    T: int
    regret: float
    mean_epoch_len: float
    K: int
    validity_violations: int
    seconds: Optional[float] = None

    def csv_fields(self) -> list[str]:
        return [str(self.seed), str(self.T), repr(self.regret), repr(self.mean_epoch_len),
                str(self.K), str(self.validity_violations),
                "" if self.seconds is None else f"{self.seconds:.3f}"]


# -- configuration --------------------------------------------------------------

def _fail(path: str, msg: str):
    raise InputError(f"{path}: {msg}")


def _number(doc: dict, key: str, positive=True, upper=None) -> Optional[float]:
    if key not in doc or doc[key] is None:
        return None
    val = doc[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        _fail(f"config.{key}", f"expected a finite number, got {val!r}")
    if positive and not val > 0:
        _fail(f"config.{key}", f"must be positive, got {val!r}")
    if upper is not None and not val < upper:
        _fail(f"config.{key}", f"must be below {upper}, got {val!r}")
    return float(val)


def _load_mdp(src, base_dir: Path) -> AnyMdp:
    if isinstance(src, str):
        path = Path(src)
        if not path.is_absolute():
            path = base_dir / path
        if not path.is_file():
            _fail("config.mdp", f"file not found: {path}")
        try:
            src = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            _fail("config.mdp", f"{path} is not valid JSON ({exc})")
    if not isinstance(src, dict):
        _fail("config.mdp", "expected a file path or an inline object")
    try:
        if "psi" in src:
            return LinearMixtureMdp.from_dict(src)
        return TabularMdp.from_dict(src)
    except InputError as exc:
        _fail("config.mdp", str(exc))


def mdp_from_document(doc: dict) -> AnyMdp:
    """Tabular or mixture instance, decided by the presence of ``psi``."""
    return _load_mdp(doc, Path("."))


def _resolve_tuning(mdp: AnyMdp, backend: str, T: int, doc: dict):
    tab = mdp.base if isinstance(mdp, LinearMixtureMdp) else mdp
    eta = _number(doc, "eta")
    if eta is None:
        eta = default_learning_rate(tab.n_actions, tab.horizon, T)
    delta = _number(doc, "delta", upper=1.0)
    if delta is None:
        delta = 1.0 / T if T > 1 else 0.5   # 1/T is not a valid confidence at T = 1
    reg_lambda = _number(doc, "lambda")
    if reg_lambda is None:
        reg_lambda = 1.0
    beta = _number(doc, "beta", positive=False)
    if beta is not None and beta < 0:
        _fail("config.beta", f"must be nonnegative, got {beta!r}")
    if beta is None:
        if backend == "tabular":
            beta = tabular_beta(tab.n_states, tab.n_actions, T, delta, tab.horizon)
        else:
            beta = linmix_beta(mdp.d, T, mdp.bound_B, tab.horizon, reg_lambda, delta)
    return eta, beta, reg_lambda, delta


def config_from_dict(doc: dict, base_dir=".") -> ExperimentConfig:
    """Validate a config document; relative paths resolve against ``base_dir``."""
    base_dir = Path(base_dir)
    if not isinstance(doc, dict):
        _fail("config", "expected a JSON object")
    unknown = sorted(set(doc) - CONFIG_KEYS)
    if unknown:
        _fail(f"config.{unknown[0]}", "unknown key")
    for key in ("mdp", "T"):
        if key not in doc:
            _fail(f"config.{key}", "required key is missing")

    T = doc["T"]
    if isinstance(T, bool) or not isinstance(T, int) or T < 1:
        _fail("config.T", f"expected a positive integer, got {T!r}")
    seeds = doc.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        _fail("config.seeds", "expected a nonempty array of integers")
    for i, s in enumerate(seeds):
        if isinstance(s, bool) or not isinstance(s, int) or s < 0:
            _fail(f"config.seeds[{i}]", f"expected a nonnegative integer, got {s!r}")
    if len(set(seeds)) != len(seeds):
        _fail("config.seeds", "seeds must be distinct")

    mdp = _load_mdp(doc["mdp"], base_dir)
    is_mixture = isinstance(mdp, LinearMixtureMdp)
    backend = doc.get("backend", "linmix" if is_mixture else "tabular")
    if backend not in BACKENDS:
        _fail("config.backend", f"expected one of {BACKENDS}, got {backend!r}")
    if (backend == "linmix") != is_mixture:
        kind = "linear-mixture" if is_mixture else "tabular"
        _fail("config.backend", f"backend {backend!r} does not match the {kind} MDP")
    if backend == "tabular" and "lambda" in doc:
        _fail("config.lambda", "only meaningful for the linmix backend")
    tab = mdp.base if is_mixture else mdp
    if "eta" not in doc and tab.n_actions < 2:
        _fail("config.eta", "required when the MDP has a single action")

    eta, beta, reg_lambda, delta = _resolve_tuning(mdp, backend, T, doc)
    out_dir = doc.get("out_dir", "runs")
    if not isinstance(out_dir, str):
        _fail("config.out_dir", "expected a path string")
    out_path = Path(out_dir)
    if not out_path.is_absolute():
        out_path = base_dir / out_path
    explicit = frozenset(k for k in _OVERRIDES if doc.get(k) is not None)
    return ExperimentConfig(mdp=mdp, backend=backend, T=T, seeds=list(seeds), eta=eta, beta=beta,
                            reg_lambda=reg_lambda, delta=delta, out_dir=out_path,
                            explicit=explicit)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"config: {path} is not valid JSON ({exc})") from exc
    return config_from_dict(doc, base_dir=path.parent)


# -- runs -------------------------------------------------------------------------

def run_seed(config: ExperimentConfig, seed: int, optimum: Optional[float] = None,
             record_seconds: bool = False):
    """One RAVI-UCB run; returns (RunLog, MetricsRow)."""
    mdp = config.tabular
    start = time.perf_counter()
    log = run_ravi_ucb(mdp, config.make_estimator(),
                       PlannerConfig(config.T, eta=config.eta, delta=config.delta, seed=seed))
    seconds = time.perf_counter() - start
    if optimum is None:
        optimum = optimal_return(mdp)
    gaps = epoch_gaps(mdp, log, optimum)
    if gaps.min() < REGRET_FLOOR:
        raise NumericalError(f"epoch gap {gaps.min():.3e} below the optimality floor")
    lengths = log.epoch_lengths()
    row = MetricsRow(seed=seed, T=config.T, regret=float(gaps @ lengths),
                     mean_epoch_len=float(lengths.mean()), K=log.n_epochs,
                     validity_violations=int((validity_slacks(log, mdp) > 0).sum()),
                     seconds=seconds if record_seconds else None)
    return log, row


def _run_and_write(config: ExperimentConfig, seed: int, optimum: float,
                   record_seconds: bool) -> MetricsRow:
    log, row = run_seed(config, seed, optimum, record_seconds)
    run_dir = config.out_dir / f"seed_{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    log.write_trace_csv(run_dir / "trace.csv")
    log.write_epochs_json(run_dir / "epochs.json")
    return row


def write_metrics_csv(rows: Sequence[MetricsRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for row in rows:
            w.writerow(row.csv_fields())


def run_experiment(config: ExperimentConfig, record_seconds: bool = False,
                   workers: int = 1) -> list[MetricsRow]:
    """One run per seed; persists traces, snapshots, config, MDP and metrics.

    Wall-clock seconds are only written when ``record_seconds`` is set, so
    that repeated runs produce byte-identical files.
    """
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    config.mdp.save(out / "mdp.json")
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    optimum = optimal_return(config.tabular)
    if workers > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_and_write, config, s, optimum, record_seconds)
                       for s in config.seeds]
            rows = [f.result() for f in futures]
    else:
        rows = [_run_and_write(config, s, optimum, record_seconds) for s in config.seeds]
    write_metrics_csv(rows, out / "metrics.csv")
    return rows


def sweep(config: ExperimentConfig, T_values: Sequence[int], workers: int = 1,
          path=None) -> list[dict]:
    """Mean regret per horizon, written as ``T,mean_regret,stderr,slope``.

    ``slope`` is the least-squares log-log slope over the whole grid, repeated
    on every row; it is empty with a single horizon or a nonpositive mean.
    Each horizon gets its own run directory ``out_dir/T_<T>``.
    """
    T_values = [int(T) for T in T_values]
    if not T_values or min(T_values) < 1:
        raise InputError("sweep needs at least one positive horizon")
    table = []
    for T in T_values:
        cfg = config.with_horizon(T, config.out_dir / f"T_{T}")
        regrets = np.array([r.regret for r in run_experiment(cfg, workers=workers)])
        stderr = float(regrets.std(ddof=1) / math.sqrt(regrets.size)) if regrets.size > 1 else 0.0
        table.append({"T": T, "mean_regret": float(regrets.mean()), "stderr": stderr})
    means = [row["mean_regret"] for row in table]
    slope = None
    if len(set(T_values)) > 1 and min(means) > 0:
        slope = loglog_slope(T_values, means)
    for row in table:
        row["slope"] = slope
    path = Path(path) if path is not None else config.out_dir / "sweep.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for row in table:
            w.writerow([row["T"], repr(row["mean_regret"]), repr(row["stderr"]),
                        "" if slope is None else repr(slope)])
    return table


# -- validation of recorded runs --------------------------------------------------

def load_run_dir(run_dir):
    """(config, [(seed, RunLog), ...]) from a directory written by ``run_experiment``."""
    run_dir = Path(run_dir)
    if not (run_dir / "config.json").is_file():
        raise FileNotFoundError(f"no config.json in {run_dir}")
    config = load_config(run_dir / "config.json")
    logs = []
    for seed in config.seeds:
        seed_dir = run_dir / f"seed_{seed}"
        if not (seed_dir / "trace.csv").is_file():
            raise FileNotFoundError(f"missing trace for seed {seed} in {run_dir}")
        logs.append((seed, RunLog.read(seed_dir / "trace.csv", seed_dir / "epochs.json",
                                       config.tabular.reward)))
    return config, logs


def validate_run_dir(run_dir, trials: int = 1000, n_candidates: int = 10_000,
                     check_seed: int = 0) -> list[CheckReport]:
    """Every per-run check on every seed plus the pooled epoch-schedule check."""
    config, logs = load_run_dir(run_dir)
    mdp = config.tabular
    optimum = optimal_return(mdp)
    reports = []
    for seed, log in logs:
        rng = np.random.default_rng([check_seed, seed])
        per_run = [check_validity(log, mdp), check_sandwich(log, mdp),
                   check_md_identity(log, rng, n_candidates=n_candidates),
                   check_kl_chain(mdp, log.epochs[-1].policy, log.pi0),
                   check_online_to_batch(mdp, log, trials, rng, optimum=optimum)]
        if config.backend == "linmix":
            per_run += [check_elliptical(log, config.mdp.bound_B, config.reg_lambda),
                        check_bad_epochs(log, config.mdp.bound_B, config.reg_lambda)]
        for rep in per_run:
            rep.check = f"seed_{seed}/{rep.check}"
        reports += per_run
    completed = sum(len(lg.completed_epoch_lengths()) for _, lg in logs)
    if completed >= MIN_SCHEDULE_EPOCHS:
        reports.append(check_epoch_schedule([lg for _, lg in logs]))
    return reports


def write_checks_json(reports: Sequence[CheckReport], path) -> None:
    Path(path).write_text(json.dumps([r.to_dict() for r in reports], indent=2) + "\n",
                          encoding="utf-8")
