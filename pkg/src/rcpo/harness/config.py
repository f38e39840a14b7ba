"""Flat ``key = value`` experiment configuration.

Keys carry a section prefix::

    run.seeds = 0,1,2
    env.kind = rover
    constraint.alpha = 0.5
    algo.name = rcpo
    sched.lambda = const:2.5e-5
    eval.every = 5120

Blank lines and ``#`` comments are ignored.  Unset keys take defaults that
depend on ``env.kind``; the parsed config always holds resolved values, so
``dump_config`` followed by ``parse_config`` gives back an equal object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from ..agents.training import TrainConfig, TrainConfigError
from ..cmdp import ConstraintKind, ConstraintSpec
from ..schedules import StepSchedule, parse_schedule

__all__ = [
    "ConfigError",
    "EnvConfig",
    "ExperimentConfig",
    "dump_config",
    "parse_config",
    "read_config",
]

ENV_KINDS = ("rover", "torque", "random", "file")
ALGORITHMS = ("rcpo", "lagrange_mc", "shaping")


class ConfigError(ValueError):
    """Bad configuration; ``line`` and ``key`` locate the problem when known."""

    def __init__(self, message, line=None, key=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line, self.key = line, key


@dataclass(frozen=True)
class EnvConfig:
    kind: str = "rover"
    # rover
    layout: str = "bundled"
    slip: float = 0.05
    r_step: float = -0.01
    r_goal: float = 0.0
    restart: bool = True
    restart_period: int = 5120
    # torque toy
    levels: tuple = (0.0, 1.0)
    horizon: int = 4
    gain: float = 1.0
    # random
    seed: int = 0
    states: int = 5
    actions: int = 2
    penalty_density: float = 0.3
    # file
    path: str = ""
    # shared
    gamma: float = 0.99
    max_episode_steps: int | None = 500


# keys echoed for each environment kind
ENV_KEYS = {
    "rover": ("layout", "slip", "r_step", "r_goal", "gamma", "max_episode_steps", "restart",
              "restart_period"),
    "torque": ("levels", "horizon", "gain", "gamma", "max_episode_steps"),
    "random": ("seed", "states", "actions", "penalty_density", "gamma", "max_episode_steps"),
    "file": ("path", "max_episode_steps"),
}

KIND_DEFAULTS = {
    "rover": dict(gamma=0.99, max_episode_steps=500, constraint="probabilistic", alpha=0.5,
                  every=5120, episodes=1024),
    "torque": dict(gamma=0.99, max_episode_steps=None, constraint="mean", alpha=0.25,
                   every=1000, episodes=200),
    "random": dict(gamma=0.9, max_episode_steps=100, constraint="discounted", alpha=None,
                   every=1000, episodes=200),
    "file": dict(gamma=None, max_episode_steps=None, constraint="discounted", alpha=None,
                 every=1000, episodes=200),
}


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig
    constraint: ConstraintSpec
    algorithm: str
    train: TrainConfig
    seeds: tuple = (0,)
    out: str = "runs"
    name: str = "experiment"
    shaping_lambda: float = 0.0

    def train_config(self, seed: int) -> TrainConfig:
        return replace(self.train, seed=int(seed), constraint=self.constraint)


def _to_bool(v):
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _to_int(v):
    x = float(v)
    if not x.is_integer():
        raise ValueError(f"not an integer: {v!r}")
    return int(x)


def _opt_int(v):
    return None if v.lower() in ("none", "") else _to_int(v)


def _floats(v):
    return tuple(float(x) for x in v.split(",") if x.strip())


def _ints(v):
    return tuple(_to_int(x) for x in v.split(",") if x.strip())


def _opt_sched(v):
    return None if v.lower() == "none" else parse_schedule(v)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    return str(v)


ENV_PARSERS = {
    "kind": str, "layout": str, "slip": float, "r_step": float, "r_goal": float,
    "restart": _to_bool, "restart_period": _to_int, "levels": _floats, "horizon": _to_int,
    "gain": float, "seed": _to_int, "states": _to_int, "actions": _to_int,
    "penalty_density": float, "path": str, "gamma": float, "max_episode_steps": _opt_int,
}

# key -> (TrainConfig field, parser)
ALGO_KEYS = {
    "algo.total_steps": ("total_steps", _to_int),
    "algo.rollout": ("rollout", _to_int),
    "algo.gamma": ("gamma", lambda v: None if v.lower() == "none" else float(v)),
    "algo.gae_tau": ("gae_tau", float),
    "algo.lambda_init": ("lambda_init", float),
    "algo.lambda_max": ("lambda_max", float),
    "algo.lambda_window": ("lambda_window", _to_int),
    "algo.theta_bound": ("theta_bound", float),
    "algo.actor": ("actor", str),
    "algo.hidden": ("hidden", _to_int),
    "algo.baseline": ("baseline", _to_bool),
    "sched.actor": ("actor_schedule", parse_schedule),
    "sched.critic": ("critic_schedule", parse_schedule),
    "sched.lambda": ("lambda_schedule", _opt_sched),
    "eval.every": ("eval_every", _to_int),
    "eval.episodes": ("eval_episodes", _to_int),
    "eval.mode": ("eval_mode", str),
}

OTHER_KEYS = ("run.name", "run.seeds", "run.out", "algo.name", "algo.lambda",
              "constraint.kind", "constraint.alpha", "constraint.discount")


def _split_lines(text):
    seen = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=n)
        key, value = (x.strip() for x in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", line=n)
        if key in seen:
            raise ConfigError(f"duplicate key (first set on line {seen[key][0]})", line=n, key=key)
        seen[key] = (n, value)
    return seen


def parse_config(text: str) -> ExperimentConfig:
    items = _split_lines(text)
    known = set(ALGO_KEYS) | set(OTHER_KEYS) | {f"env.{k}" for k in ENV_PARSERS}
    for key, (n, _) in items.items():
        if key not in known:
            raise ConfigError("unknown key", line=n, key=key)

    def get(key, parser, default):
        if key not in items:
            return default
        n, v = items[key]
        try:
            return parser(v)
        except ValueError as exc:
            raise ConfigError(str(exc), line=n, key=key) from None

    kind = get("env.kind", str, "rover")
    if kind not in ENV_KINDS:
        raise ConfigError(f"unknown environment kind {kind!r}", line=items["env.kind"][0],
                          key="env.kind")
    kd = KIND_DEFAULTS[kind]
    env_vals = {"kind": kind}
    for name in ENV_KEYS[kind]:
        default = kd.get(name, getattr(EnvConfig, name))
        env_vals[name] = get(f"env.{name}", ENV_PARSERS[name], default)
    for key in items:
        if key.startswith("env.") and key[4:] not in env_vals:
            raise ConfigError(f"not used by env.kind={kind}", line=items[key][0], key=key)
    if kind == "file":
        if not env_vals["path"]:
            raise ConfigError("env.kind=file needs env.path", key="env.path")
        env_vals["gamma"] = None
    env = EnvConfig(**env_vals)
    _check_env(env, items)

    ckind = get("constraint.kind", str, kd["constraint"])
    try:
        ckind = ConstraintKind(ckind)
    except ValueError:
        raise ConfigError(f"unknown constraint kind {ckind!r}",
                          line=items["constraint.kind"][0], key="constraint.kind") from None
    alpha = get("constraint.alpha", float, kd["alpha"])
    if alpha is None:
        raise ConfigError(f"constraint.alpha is required for env.kind={kind}",
                          key="constraint.alpha")
    cdisc = get("constraint.discount", float,
                env.gamma if ckind is ConstraintKind.DISCOUNTED_SUM and env.gamma is not None
                else 1.0)
    try:
        constraint = ConstraintSpec(ckind, alpha, cdisc)
    except ValueError as exc:
        raise ConfigError(str(exc), key="constraint") from None

    algorithm = get("algo.name", str, "rcpo")
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}", line=items["algo.name"][0],
                          key="algo.name")
    shaping_lambda = get("algo.lambda", float, 0.0)
    if "algo.lambda" in items and algorithm != "shaping":
        raise ConfigError("only used by algo.name=shaping", line=items["algo.lambda"][0],
                          key="algo.lambda")
    if shaping_lambda < 0:
        raise ConfigError("fixed lambda must be non-negative", key="algo.lambda")

    tvals = {}
    for key in ("sched.actor", "sched.critic", "algo.total_steps"):
        if key not in items:
            raise ConfigError("required key missing", key=key)
    for key, (fname, parser) in ALGO_KEYS.items():
        if key in items:
            tvals[fname] = get(key, parser, None)
    tvals.setdefault("eval_every", kd["every"])
    tvals.setdefault("eval_episodes", kd["episodes"])
    tvals.setdefault("lambda_schedule", None)
    if algorithm == "shaping":
        if tvals["lambda_schedule"] is not None:
            raise ConfigError("shaping keeps lambda fixed; set sched.lambda = none",
                              line=items["sched.lambda"][0], key="sched.lambda")
        tvals["lambda_init"] = shaping_lambda
    train = TrainConfig(**tvals)
    try:
        train.validate(uses_critic=algorithm != "lagrange_mc" or train.baseline)
    except TrainConfigError as exc:
        raise ConfigError(str(exc), key="sched" if "order" in str(exc) else None) from None

    seeds = get("run.seeds", _ints, (0,))
    if not seeds:
        raise ConfigError("need at least one seed", line=items["run.seeds"][0], key="run.seeds")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("duplicate seeds", line=items["run.seeds"][0], key="run.seeds")
    return ExperimentConfig(env=env, constraint=constraint, algorithm=algorithm, train=train,
                            seeds=seeds, out=get("run.out", str, "runs"),
                            name=get("run.name", str, "experiment"),
                            shaping_lambda=shaping_lambda)


def _check_env(env: EnvConfig, items):
    def bad(name, msg):
        key = f"env.{name}"
        raise ConfigError(msg, line=items.get(key, (None,))[0], key=key)

    if env.gamma is not None and not 0.0 <= env.gamma < 1.0:
        bad("gamma", "gamma must lie in [0, 1)")
    if env.max_episode_steps is not None and env.max_episode_steps < 1:
        bad("max_episode_steps", "must be >= 1")
    if env.kind == "rover":
        if not 0.0 <= env.slip < 1.0:
            bad("slip", "slip must lie in [0, 1)")
        if env.restart_period < 1:
            bad("restart_period", "must be >= 1")
    elif env.kind == "torque":
        if not env.levels:
            bad("levels", "need at least one torque level")
        if env.horizon < 1:
            bad("horizon", "must be >= 1")
    elif env.kind == "random":
        if env.states < 1 or env.actions < 1:
            bad("states", "need at least one state and one action")
        if not 0.0 <= env.penalty_density <= 1.0:
            bad("penalty_density", "must lie in [0, 1]")
        if env.max_episode_steps is None:
            bad("max_episode_steps", "random CMDPs have no terminal states; set a step cap")


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical echo of a parsed config; parses back to an equal object."""
    lines = [f"run.name = {cfg.name}", f"run.seeds = {_fmt(tuple(cfg.seeds))}",
             f"run.out = {cfg.out}", f"env.kind = {cfg.env.kind}"]
    for name in ENV_KEYS[cfg.env.kind]:
        lines.append(f"env.{name} = {_fmt(getattr(cfg.env, name))}")
    lines += [f"constraint.kind = {cfg.constraint.kind.value}",
              f"constraint.alpha = {_fmt(float(cfg.constraint.threshold))}",
              f"constraint.discount = {_fmt(float(cfg.constraint.discount))}",
              f"algo.name = {cfg.algorithm}"]
    if cfg.algorithm == "shaping":
        lines.append(f"algo.lambda = {_fmt(float(cfg.shaping_lambda))}")
    for key, (fname, _) in ALGO_KEYS.items():
        value = getattr(cfg.train, fname)
        if cfg.algorithm == "shaping" and fname == "lambda_init":
            continue
        if isinstance(value, StepSchedule):
            value = str(value)
        elif fname == "lambda_max" and math.isinf(value):
            value = "inf"
        lines.append(f"{key} = {_fmt(value)}")
    return "\n".join(lines) + "\n"


def read_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())
