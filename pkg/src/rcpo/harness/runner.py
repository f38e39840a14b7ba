"""Seeded experiment execution and per-seed artifacts."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from ..agents import lagrange_mc_train, rcpo_train, reward_shaping_train, write_policy
from ..agents.io import metrics_to_csv
from ..cmdp import CMDPValidationError, ConstraintKind, read_cmdp
from ..envs import (
    Environment,
    RoverConfig,
    TorqueToyConfig,
    default_rover_config,
    generate_rover_layout,
    random_cmdp,
    rover_build,
    rover_restart_dist,
    torque_toy_build,
)
from ..oracle import exact_jc
from .config import ConfigError, EnvConfig, ExperimentConfig, dump_config
from .plotting import emit_plots

__all__ = ["RunArtifacts", "build_env", "run_experiment", "run_seed"]

TRAINERS = {"rcpo": rcpo_train, "lagrange_mc": lagrange_mc_train}


@dataclass(frozen=True)
class RunArtifacts:
    seed: int
    directory: str
    metrics_csv: str
    policy: str
    config_echo: str
    summary_json: str
    plot: str
    summary: dict


def _rover_config(env: EnvConfig) -> RoverConfig:
    params = dict(slip=env.slip, r_step=env.r_step, r_goal=env.r_goal, gamma=env.gamma)
    if env.layout == "bundled":
        return default_rover_config(**params)
    if env.layout.startswith("seed:"):
        try:
            seed = int(env.layout[5:])
        except ValueError:
            raise ConfigError(f"bad layout seed {env.layout!r}", key="env.layout") from None
        return generate_rover_layout(seed, **params)
    with open(env.layout) as fh:
        return RoverConfig.from_ascii(fh.read(), **params)


def build_env(env: EnvConfig, constraint) -> Environment:
    """Instantiate the environment described by ``env`` with the given constraint."""
    restart = None
    try:
        if env.kind == "rover":
            rcfg = _rover_config(env)
            cmdp = rover_build(rcfg)
            if env.restart:
                period = env.restart_period

                def restart(episode):
                    return rover_restart_dist(1 + (episode - 1) // period, rcfg)
        elif env.kind == "torque":
            cmdp = torque_toy_build(TorqueToyConfig(env.levels, env.horizon, env.gain,
                                                    constraint.threshold, env.gamma))
        elif env.kind == "random":
            cmdp = random_cmdp(env.seed, env.states, env.actions, env.penalty_density, env.gamma)
        else:
            cmdp = read_cmdp(env.path)
    except (ValueError, CMDPValidationError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), key="env") from None
    if env.max_episode_steps is None and not cmdp.terminal_states:
        raise ConfigError("CMDP has no terminal states; set env.max_episode_steps",
                          key="env.max_episode_steps")
    if constraint.kind is ConstraintKind.PROBABILISTIC and not cmdp.terminal_states:
        raise ConfigError("probabilistic constraints need terminal states", key="constraint.kind")
    return Environment(cmdp, constraint, max_episode_steps=env.max_episode_steps,
                       restart=restart, name=env.kind)


def _train(cfg: ExperimentConfig, env, seed):
    tcfg = cfg.train_config(seed)
    if cfg.algorithm == "shaping":
        return reward_shaping_train(env, cfg.shaping_lambda, tcfg)
    return TRAINERS[cfg.algorithm](env, tcfg)


def _summary(cfg, run, env, seed):
    last = run.final
    alpha = cfg.constraint.threshold
    out = {
        "algorithm": cfg.algorithm,
        "seed": int(seed),
        "alpha": float(alpha),
        "constraint_kind": cfg.constraint.kind.value,
        "eval_mode": cfg.train.eval_mode,
        "final_step": int(last.step),
        "final_episodes": int(last.episodes),
        "final_lambda": float(last.lam),
        "final_reward": float(last.eval_reward_mean),
        "final_constraint": float(last.eval_constraint_mean),
        "final_constraint_stderr": float(last.eval_constraint_stderr),
        "feasible": bool(last.eval_constraint_mean <= alpha),
    }
    if run.actor.kind == "tabular":
        try:
            out["exact_constraint"] = exact_jc(env.cmdp, run.actor.probs_table(), cfg.constraint)
        except (CMDPValidationError, np.linalg.LinAlgError):
            pass
    return out


def run_seed(cfg: ExperimentConfig, seed: int, out_dir=None) -> RunArtifacts:
    """Train one seed and write metrics.csv, policy.txt, config.txt, summary.json, curves.svg."""
    env = build_env(cfg.env, cfg.constraint)
    run = _train(cfg, env, seed)
    d = os.path.join(cfg.out if out_dir is None else out_dir, f"seed_{seed}")
    os.makedirs(d, exist_ok=True)
    paths = {name: os.path.join(d, name) for name in
             ("metrics.csv", "policy.txt", "config.txt", "summary.json", "curves.svg")}
    with open(paths["metrics.csv"], "w", newline="") as fh:
        fh.write(metrics_to_csv(run.metrics))
    write_policy(run.actor, paths["policy.txt"])
    with open(paths["config.txt"], "w") as fh:
        fh.write(dump_config(cfg))
    summary = _summary(cfg, run, env, seed)
    with open(paths["summary.json"], "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    emit_plots([paths["metrics.csv"]], paths["curves.svg"], alpha=cfg.constraint.threshold,
               labels=[f"{cfg.algorithm} seed {seed}"])
    return RunArtifacts(seed, d, paths["metrics.csv"], paths["policy.txt"], paths["config.txt"],
                        paths["summary.json"], paths["curves.svg"], summary)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> list:
    """Run every seed in turn; also writes a combined plot and config echo at the top level."""
    root = cfg.out if out_dir is None else out_dir
    arts = [run_seed(cfg, seed, root) for seed in cfg.seeds]
    with open(os.path.join(root, "config.txt"), "w") as fh:
        fh.write(dump_config(cfg))
    if len(arts) > 1:
        emit_plots([a.metrics_csv for a in arts], os.path.join(root, "curves.svg"),
                   alpha=cfg.constraint.threshold,
                   labels=[f"{cfg.algorithm} seed {a.seed}" for a in arts])
    return arts
