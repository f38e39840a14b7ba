"""Command line entry point.

Subcommands::

    rcpo train --config exp.cfg [--seed N] [--out DIR]
    rcpo evaluate --policy policy.txt --env exp.cfg --episodes N [--seed N]
    rcpo plot --out curves.svg run/seed_0/metrics.csv ...
    rcpo oracle --env cmdp.txt --alpha A [--kind discounted] [--ledger ledger.csv]

Results go to stdout as comma-separated lines.  Exit status is 0 on
success, 2 for configuration errors and 3 for I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace

from ..agents import read_policy
from ..cmdp import CMDPValidationError, ConstraintKind, ConstraintSpec, load_cmdp
from ..oracle import ledger_to_csv, solve_cmdp_enumeration
from ..rollout import evaluate_policy
from .config import ConfigError, parse_config
from .plotting import emit_plots
from .runner import build_env, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3


def _print_rows(header, rows):
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)


def _read(path):
    with open(path) as fh:
        return fh.read()


def _load_env(path, alpha=None, kind=None, discount=None):
    """An environment from either a serialized CMDP or an experiment config."""
    text = _read(path)
    if text.lstrip().startswith("cmdp"):
        cmdp = load_cmdp(text)
        if alpha is None:
            raise ConfigError("a CMDP file needs an explicit --alpha")
        kind = ConstraintKind(kind or ("probabilistic" if cmdp.terminal_states else "discounted"))
        if discount is None:
            discount = cmdp.discount if kind is ConstraintKind.DISCOUNTED_SUM else 1.0
        spec = ConstraintSpec(kind, alpha, discount)
        return cmdp, spec, None
    cfg = parse_config(text)
    spec = cfg.constraint
    if alpha is not None or kind is not None or discount is not None:
        spec = ConstraintSpec(ConstraintKind(kind) if kind else spec.kind,
                              spec.threshold if alpha is None else alpha,
                              spec.discount if discount is None else discount)
    env = build_env(cfg.env, spec)
    return env.cmdp, spec, env


def cmd_train(args):
    cfg = parse_config(_read(args.config))
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    arts = run_experiment(cfg)
    keys = ("seed", "final_step", "final_lambda", "final_reward", "final_constraint",
            "final_constraint_stderr", "feasible")
    _print_rows(keys + ("directory",),
                [[a.summary[k] for k in keys] + [a.directory] for a in arts])
    return EXIT_OK


def cmd_evaluate(args):
    if args.episodes < 1:
        raise ConfigError("--episodes must be >= 1")
    cmdp, spec, env = _load_env(args.env, args.alpha, args.kind)
    if env is None:
        from ..envs import Environment
        env = Environment(cmdp, spec, max_episode_steps=args.max_steps)
    policy = read_policy(args.policy)
    res = evaluate_policy(env, policy, args.episodes, args.seed)
    _print_rows(("episodes", "reward_mean", "constraint_mean", "constraint_stderr"),
                [[args.episodes, repr(res.reward_mean), repr(res.constraint_mean),
                  repr(res.constraint_stderr)]])
    return EXIT_OK


def cmd_plot(args):
    emit_plots(args.csv, args.out, alpha=args.alpha)
    print(args.out)
    return EXIT_OK


def cmd_oracle(args):
    cmdp, spec, _ = _load_env(args.env, args.alpha, args.kind, args.discount)
    sol = solve_cmdp_enumeration(cmdp, spec, max_policies=args.max_policies)
    rows = [["feasible", int(sol.feasible)],
            ["best_feasible_value", repr(sol.best_feasible_value)],
            ["best_feasible_jc", repr(sol.best_feasible_jc)],
            ["best_feasible_id", "" if sol.best_feasible_id is None else sol.best_feasible_id],
            ["policies", len(sol.ledger)]]
    if sol.mixture is not None:
        rows += [["mixture_value", repr(sol.mixture.value)],
                 ["mixture_jc", repr(sol.mixture.j_c)],
                 ["mixture_weight", repr(sol.mixture.weight)]]
    _print_rows(("quantity", "value"), rows)
    if args.ledger:
        with open(args.ledger, "w", newline="") as fh:
            fh.write(ledger_to_csv(sol))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="rcpo", description="Constrained policy optimisation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train every configured seed and write artifacts")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="Monte-Carlo evaluation of a saved policy")
    e.add_argument("--policy", required=True)
    e.add_argument("--env", required=True, help="experiment config or serialized CMDP")
    e.add_argument("--episodes", type=int, default=1024)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--alpha", type=float)
    e.add_argument("--kind", choices=[k.value for k in ConstraintKind])
    e.add_argument("--max-steps", type=int, default=None)
    e.set_defaults(func=cmd_evaluate)

    pl = sub.add_parser("plot", help="render learning curves from metrics CSVs")
    pl.add_argument("--out", required=True)
    pl.add_argument("--alpha", type=float)
    pl.add_argument("csv", nargs="+")
    pl.set_defaults(func=cmd_plot)

    o = sub.add_parser("oracle", help="exact enumeration solve of a small CMDP")
    o.add_argument("--env", required=True, help="experiment config or serialized CMDP")
    o.add_argument("--alpha", type=float, required=True)
    o.add_argument("--kind", choices=[k.value for k in ConstraintKind])
    o.add_argument("--discount", type=float)
    o.add_argument("--max-policies", type=int, default=10**6)
    o.add_argument("--ledger", help="write the per-policy ledger CSV here")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CMDPValidationError, ValueError) as exc:
        print(f"rcpo {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"rcpo {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
