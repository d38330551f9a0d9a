"""Command line entry point: ``qedsched {solve,sweep,audit,simulate}``."""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .errors import BalanceViolation, ConfigError, NegativeAbandonment, NonPositiveRate, QedError, UnsupportedSpec
from .experiments import canonical_config, cmd_audit, cmd_simulate, cmd_solve, cmd_sweep, load_config

EXIT_CONFIG = 2
EXIT_FAILURE = 1
EXIT_SOLVER = 3

_CONFIG_ERRORS = (ConfigError, BalanceViolation, NonPositiveRate, NegativeAbandonment, UnsupportedSpec)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qedsched", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("solve", "solve the HJB equation and write the value grid"),
                           ("sweep", "simulate every (n, policy) cell and compare with V(x0)"),
                           ("audit", "run the invariant checks and print pass/fail per item"),
                           ("simulate", "replicate one (n, policy) cell, one CSV row per seed")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", help="YAML config (default: the shipped canonical config)")
        sp.add_argument("--seed", type=int, help="override base_seed")
        sp.add_argument("--out", help="output path")
        sp.add_argument("--reps", type=int, help="override reps")
        if name == "simulate":
            sp.add_argument("--n", type=int, help="system size (default: first sweep_n)")
            sp.add_argument("--policy", help='policy id, e.g. "pscp" or "prio(2,1)"')
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else canonical_config()
        cfg = cfg.with_overrides(seed=args.seed, reps=args.reps)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "solve":
            print(cmd_solve(cfg, args.out).line())
        elif args.command == "sweep":
            res = cmd_sweep(cfg, args.out, progress=lambda m: print(m, file=sys.stderr))
            print(f"wrote {res.path}" if res.path else "no output")
        elif args.command == "simulate":
            results = cmd_simulate(cfg, args.n, args.policy, args.out)
            mean = sum(r.discounted_cost for r in results) / len(results)
            print(f"{len(results)} replications, mean discounted cost {mean:.6g}")
        else:
            items = cmd_audit(cfg)
            for it in items:
                print(it.line())
            return 0 if all(it.passed for it in items) else EXIT_FAILURE
    except _CONFIG_ERRORS as exc:
        print(f"config error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except QedError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
