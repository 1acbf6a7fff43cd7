"""Command-line entry point: ``ravi-ucb {run,sweep,validate,gen-mdp}``.

Exit codes: 0 on success (for ``validate``: every check passed), 1 on bad
input, missing files or failed checks, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import DomainError, InputError, NumericalError
from .harness import (load_config, run_experiment, sweep, validate_run_dir,
                      write_checks_json)
from .instances import random_convex_mixture, reference_mixture, reference_tabular
from .mdp import random_mdp


def _parse_horizons(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("horizons must be positive integers")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ravi-ucb",
                                     description="Optimistic regularized value iteration runs and checks.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("run", help="run every seed of a config")
    p.add_argument("config")
    p.add_argument("--out", help="override the config's out_dir")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timing", action="store_true",
                   help="fill the seconds column (makes metrics.csv non-reproducible)")

    p = sub.add_parser("sweep", help="mean regret over several horizons")
    p.add_argument("config")
    p.add_argument("--T", dest="horizons", type=_parse_horizons, required=True,
                   help="comma-separated horizons, e.g. 1024,4096")
    p.add_argument("--out", help="override the config's out_dir")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("validate", help="check a run directory; writes checks.json")
    p.add_argument("run_dir")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--candidates", type=int, default=10_000)

    p = sub.add_parser("gen-mdp", help="emit a tabular or linear-mixture instance as JSON")
    p.add_argument("--kind", choices=("tabular", "mixture"), default="tabular")
    p.add_argument("--reference", action="store_true",
                   help="the fixed 5-state reference instance of the chosen kind")
    p.add_argument("--states", type=int, default=5)
    p.add_argument("--actions", type=int, default=2)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path (default: stdout)")
    return parser


def _config(args):
    config = load_config(args.config)
    if args.out:
        config.out_dir = Path(args.out)
    return config


def _cmd_run(args) -> int:
    config = _config(args)
    rows = run_experiment(config, record_seconds=args.timing, workers=args.workers)
    for row in rows:
        print(f"seed {row.seed}: regret {row.regret:.4f}, K {row.K}, "
              f"validity violations {row.validity_violations}")
    print(f"wrote {config.out_dir}")
    return 0


def _cmd_sweep(args) -> int:
    config = _config(args)
    table = sweep(config, args.horizons, workers=args.workers)
    for row in table:
        print(f"T={row['T']}: mean regret {row['mean_regret']:.4f} +/- {row['stderr']:.4f}")
    if table[0]["slope"] is not None:
        print(f"log-log slope {table[0]['slope']:.4f}")
    return 0


def _cmd_validate(args) -> int:
    reports = validate_run_dir(args.run_dir, trials=args.trials, n_candidates=args.candidates)
    write_checks_json(reports, Path(args.run_dir) / "checks.json")
    for rep in reports:
        print(rep.line())
    return 0 if all(r.passed for r in reports) else 1


def _cmd_gen_mdp(args) -> int:
    if args.reference:
        mdp = reference_mixture() if args.kind == "mixture" else reference_tabular()
    else:
        rng = np.random.default_rng(args.seed)
        if args.kind == "mixture":
            mdp = random_convex_mixture(args.states, args.actions, args.d, args.gamma, rng)
        else:
            mdp = random_mdp(args.states, args.actions, args.gamma, rng)
    text = json.dumps(mdp.to_dict())
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text)
    return 0


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "validate": _cmd_validate,
            "gen-mdp": _cmd_gen_mdp}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (OSError, InputError, DomainError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
