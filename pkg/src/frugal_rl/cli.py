"""Command line entry point: ``frugal-rl <command> ...``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import harness, oracle
from .config import load_config
from .environments import ChainParams
from .errors import ConfigError


def _train(args):
    overrides = {}
    if args.seeds:
        overrides["run.seeds"] = args.seeds
    cfg = load_config(args.config, overrides)
    out = harness.run_experiment(cfg, out=args.out)
    print(out)


def _summarize(args):
    path = harness.summarize(args.dir, converged_frac=args.window)
    sys.stdout.write(Path(path).read_text())


def _traces(args):
    out = args.out or Path(args.checkpoint).with_suffix("").as_posix() + "_traces"
    for p in harness.export_traces(args.checkpoint, args.env, args.episodes, out, seed=args.seed):
        print(p)


def _curves(args):
    print(harness.emit_curves(args.dir, buckets=args.buckets))


def _oracle(args):
    if not args.env.startswith("chain:"):
        raise ConfigError("env", "the exact solver handles chain:N instances only")
    n = int(args.env.split(":", 1)[1])
    horizon = args.horizon
    params = ChainParams(length=n, **({"max_episode_steps": horizon} if horizon else {}))
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["instance", "agent", "c", "gamma", "K", "optimal_return", "ratio"])
    for c in (float(v) for v in args.c.split(",")):
        if args.agent == "dmsoa":
            sol = oracle.solve_dmsoa(params, c, args.gamma, args.K)
            k = args.K
        else:
            sol = oracle.solve_osmboa(params, c, args.gamma)
            k = 1
        w.writerow([args.env, args.agent, c, args.gamma, k, sol.optimal_return, sol.ratio])
    if args.out:
        out.close()


def build_parser():
    p = argparse.ArgumentParser(prog="frugal-rl", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one run per seed")
    t.add_argument("--config", required=True)
    t.add_argument("--out")
    t.add_argument("--seeds", help="comma separated, overrides run.seeds")
    t.set_defaults(func=_train)

    s = sub.add_parser("summarize", help="write summary.csv for a run directory")
    s.add_argument("dir")
    s.add_argument("--window", type=float, default=0.1, help="converged fraction of episodes")
    s.set_defaults(func=_summarize)

    tr = sub.add_parser("traces", help="export greedy measurement traces from a checkpoint")
    tr.add_argument("--checkpoint", required=True)
    tr.add_argument("--env", required=True)
    tr.add_argument("--episodes", type=int, default=5)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--out")
    tr.set_defaults(func=_traces)

    o = sub.add_parser("oracle", help="exact optimum on a chain instance (CSV to stdout)")
    o.add_argument("--env", required=True)
    o.add_argument("--agent", choices=("dmsoa", "osmboa"), required=True)
    o.add_argument("--c", required=True, help="bonus level, or comma separated grid")
    o.add_argument("--gamma", type=float, default=1.0)
    o.add_argument("--K", type=int, default=3)
    o.add_argument("--horizon", type=int)
    o.add_argument("--out")
    o.set_defaults(func=_oracle)

    cu = sub.add_parser("curves", help="bucketed mean/std curves (CSV + PNG)")
    cu.add_argument("dir")
    cu.add_argument("--buckets", type=int, default=100)
    cu.set_defaults(func=_curves)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
