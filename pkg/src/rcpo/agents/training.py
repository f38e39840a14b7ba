"""Training loops: RCPO actor-critic, Monte-Carlo Lagrangian, fixed-penalty shaping.

Every loop draws from three independent random substreams derived from the
seed (environment, agent, evaluation), so evaluations never perturb the
training trajectory and a run is reproducible bit for bit.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from ..cmdp import ConstraintKind, ConstraintSpec, Step, Trajectory, evaluate_constraint
from ..rollout import UniformStream, evaluate_policy
from ..schedules import ProjectionBox, StepSchedule, check_ordering
from .policies import DenseSoftmaxPolicy, SoftmaxPolicy
from .updates import CriticTable, LagrangeState, lambda_update

__all__ = [
    "MetricsRow",
    "TrainConfig",
    "TrainConfigError",
    "TrainRun",
    "lagrange_mc_train",
    "rcpo_train",
    "reward_shaping_train",
]


class TrainConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int
    actor_schedule: StepSchedule
    critic_schedule: StepSchedule
    lambda_schedule: StepSchedule | None = None
    rollout: int = 5
    gamma: float | None = None
    gae_tau: float = 1.0
    lambda_init: float = 0.0
    lambda_max: float = math.inf
    lambda_window: int = 1
    theta_bound: float = 50.0
    actor: str = "tabular"
    hidden: int = 32
    baseline: bool = True
    constraint: ConstraintSpec | None = None
    seed: int = 0
    eval_every: int = 1000
    eval_episodes: int = 200
    eval_mode: str = "periodic"

    def validate(self, uses_critic=True):
        if self.total_steps < 1:
            raise TrainConfigError("total_steps must be >= 1")
        if self.rollout < 1:
            raise TrainConfigError("rollout length must be >= 1")
        if self.gamma is not None and not 0.0 <= self.gamma < 1.0:
            raise TrainConfigError("gamma must lie in [0, 1)")
        if not 0.0 <= self.gae_tau <= 1.0:
            raise TrainConfigError("gae_tau must lie in [0, 1]")
        if self.lambda_max < 0 or not 0.0 <= self.lambda_init <= self.lambda_max:
            raise TrainConfigError("need 0 <= lambda_init <= lambda_max")
        if self.lambda_window < 1:
            raise TrainConfigError("lambda_window must be >= 1")
        if not self.theta_bound > 0:
            raise TrainConfigError("theta_bound must be positive")
        if self.actor not in ("tabular", "dense"):
            raise TrainConfigError(f"unknown actor {self.actor!r}")
        if self.hidden < 1:
            raise TrainConfigError("hidden must be >= 1")
        if self.eval_every < 1 or self.eval_episodes < 1:
            raise TrainConfigError("evaluation cadence and length must be >= 1")
        if self.eval_mode not in ("periodic", "online"):
            raise TrainConfigError(f"unknown eval mode {self.eval_mode!r}")
        chain = [self.actor_schedule]
        if self.lambda_schedule is not None:
            chain.insert(0, self.lambda_schedule)
        if uses_critic:
            chain.append(self.critic_schedule)
        problem = check_ordering(*chain)
        if problem:
            names = (["lambda"] if self.lambda_schedule is not None else []) + ["actor"] + (
                ["critic"] if uses_critic else [])
            raise TrainConfigError(f"{problem} (order: {' < '.join(names)})")


class MetricsRow(NamedTuple):
    step: int
    episodes: int
    lam: float
    eval_reward_mean: float
    eval_constraint_mean: float
    eval_constraint_stderr: float


@dataclass
class TrainRun:
    algorithm: str
    config: TrainConfig
    actor: object
    critic: CriticTable
    lagrange: LagrangeState
    lambda_trace: np.ndarray
    metrics: list = field(default_factory=list)
    steps: int = 0
    episodes: int = 0

    @property
    def final(self) -> MetricsRow:
        return self.metrics[-1]


def _streams(seed):
    env_ss, agent_ss, eval_ss = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(env_ss), np.random.default_rng(agent_ss),
            np.random.default_rng(eval_ss))


def _make_actor(env, cfg, rng):
    if cfg.actor == "tabular":
        actor = SoftmaxPolicy.uniform(env.n_states, env.n_actions)
    else:
        actor = DenseSoftmaxPolicy.init(env.n_states, cfg.hidden, env.n_actions, rng)
    box = ProjectionBox.uniform(actor.params.shape, cfg.theta_bound)
    return actor, box


class _Recorder:
    """Periodic (or online rolling-window) evaluation rows."""

    def __init__(self, env, cfg, rng):
        self.env, self.cfg, self.rng = env, cfg, rng
        self.rows = []
        self.online = deque(maxlen=cfg.eval_episodes)
        if cfg.constraint is not None and cfg.constraint != env.constraint:
            from ..envs.base import Environment
            self.env = Environment(env.cmdp, cfg.constraint,
                                   max_episode_steps=env.max_episode_steps, name=env.name)

    def _emit(self, step, episodes, lam, actor):
        if self.cfg.eval_mode == "periodic":
            res = evaluate_policy(self.env, actor, self.cfg.eval_episodes, self.rng)
            row = MetricsRow(step, episodes, lam, *res)
        else:
            if not self.online:
                return
            rew = np.array([x[0] for x in self.online])
            con = np.array([x[1] for x in self.online])
            err = float(con.std(ddof=1) / math.sqrt(len(con))) if len(con) > 1 else 0.0
            row = MetricsRow(step, episodes, lam, float(rew.mean()), float(con.mean()), err)
        if self.rows and self.rows[-1].step == step:
            self.rows[-1] = row
        else:
            self.rows.append(row)

    def start(self, lam, actor):
        self._emit(0, 0, lam, actor)

    def episode_done(self, step, episodes, lam, actor, ep_reward, ep_constraint):
        self.online.append((ep_reward, ep_constraint))
        if episodes % self.cfg.eval_every == 0:
            self._emit(step, episodes, lam, actor)

    def finish(self, step, episodes, lam, actor):
        if not self.rows or self.rows[-1].step != step:
            self._emit(step, episodes, lam, actor)


def _actor_critic(env, cfg: TrainConfig, algorithm: str) -> TrainRun:
    cfg.validate(uses_critic=True)
    spec = cfg.constraint or env.constraint
    alpha = spec.threshold
    gamma = env.gamma if cfg.gamma is None else cfg.gamma
    gtau = gamma * cfg.gae_tau
    env_rng, agent_rng, eval_rng = _streams(cfg.seed)
    env_u, act_u = UniformStream(env_rng), UniformStream(agent_rng)
    actor, box = _make_actor(env, cfg, agent_rng)
    V = np.zeros(env.n_states)
    dv = np.zeros(env.n_states)
    grad = actor.zeros_like_params()
    ls = LagrangeState(cfg.lambda_init, cfg.lambda_max, cfg.lambda_schedule)
    window = deque(maxlen=cfg.lambda_window)
    rec = _Recorder(env, cfg, eval_rng)
    rec.start(ls.lam, actor)
    eta2, eta3 = cfg.actor_schedule, cfg.critic_schedule
    cap = env.max_episode_steps
    t_max, total = cfg.rollout, cfg.total_steps
    lam_trace = []
    env_step = env.step

    steps = k = episodes = 0
    ep_steps = []
    s = env.sample_start(env_u(), episodes + 1)
    while steps < total:
        seg = []
        while True:
            a = actor.sample(s, act_u())
            s2, r, c, term = env_step(s, a, env_u())
            seg.append((s, a, r, c))
            ep_steps.append(Step(s, a, r, c, s2, term))
            steps += 1
            trunc = cap is not None and len(ep_steps) >= cap
            if term or trunc or len(seg) >= t_max or steps >= total:
                break
            s = s2

        lam = ls.lam
        nxt_v = 0.0 if term else V[s2]
        acc = 0.0
        for st, at, rt, ct in reversed(seg):
            vs = V[st]
            acc = (rt - lam * ct + gamma * nxt_v - vs) + gtau * acc
            actor.accumulate(grad, st, at, acc)
            dv[st] += 2.0 * acc
            nxt_v = vs
        actor.apply(grad, eta2(k), box, {x[0] for x in seg})
        grad.fill(0.0)
        V += eta3(k) * dv
        dv.fill(0.0)
        k += 1

        if term or trunc:
            traj = Trajectory(ep_steps)
            cval = evaluate_constraint(traj, spec)
            window.append(cval)
            ls = lambda_update(ls, sum(window) / len(window), alpha)
            episodes += 1
            lam_trace.append(ls.lam)
            rec.episode_done(steps, episodes, ls.lam, actor, sum(x.reward for x in ep_steps), cval)
            ep_steps = []
            s = env.sample_start(env_u(), episodes + 1)
        else:
            s = s2

    rec.finish(steps, episodes, ls.lam, actor)
    return TrainRun(algorithm, cfg, actor, CriticTable(V), ls, np.array(lam_trace),
                    rec.rows, steps, episodes)


def rcpo_train(env, cfg: TrainConfig) -> TrainRun:
    """Three-timescale advantage actor-critic on the penalized reward ``r - lam*c``.

    Rollout segments of at most ``cfg.rollout`` steps feed n-step (or GAE)
    advantages to the actor and the critic; the multiplier ascends on the
    original constraint once per finished episode.  With
    ``lambda_schedule=None`` the multiplier stays at ``lambda_init``.
    """
    return _actor_critic(env, cfg, "rcpo")


def reward_shaping_train(env, lam_fixed: float, cfg: TrainConfig) -> TrainRun:
    if lam_fixed < 0:
        raise TrainConfigError("fixed lambda must be non-negative")
    cfg = replace(cfg, lambda_schedule=None, lambda_init=float(lam_fixed),
                  lambda_max=max(cfg.lambda_max, float(lam_fixed)))
    return _actor_critic(env, cfg, "shaping")


def _tail_constraints(pens, terminal_failure, spec: ConstraintSpec):
    """C(s_t) for every t: the constraint evaluated on the remaining steps."""
    n = len(pens)
    out = [0.0] * n
    if spec.kind is ConstraintKind.PROBABILISTIC:
        return [terminal_failure] * n
    if spec.kind is ConstraintKind.DISCOUNTED_SUM:
        acc = 0.0
        for t in range(n - 1, -1, -1):
            acc = pens[t] + spec.discount * acc
            out[t] = acc
        return out
    acc = 0.0
    for t in range(n - 1, -1, -1):
        acc += pens[t]
        out[t] = acc / (n - t)
    return out


def lagrange_mc_train(env, cfg: TrainConfig) -> TrainRun:
    """Two-timescale primal-dual with Monte-Carlo returns.

    The actor ascends ``sum_t grad log pi(a_t|s_t) (G_t - lam * C_t - b(s_t))``
    once per episode, where ``G_t`` is the discounted reward-to-go and ``C_t``
    the constraint of the remaining trajectory.  ``b`` is an optional
    reward-only baseline trained on ``G_t`` (``cfg.baseline``); the penalty is
    never bootstrapped.
    """
    cfg.validate(uses_critic=cfg.baseline)
    spec = cfg.constraint or env.constraint
    alpha = spec.threshold
    gamma = env.gamma if cfg.gamma is None else cfg.gamma
    env_rng, agent_rng, eval_rng = _streams(cfg.seed)
    env_u, act_u = UniformStream(env_rng), UniformStream(agent_rng)
    actor, box = _make_actor(env, cfg, agent_rng)
    B = np.zeros(env.n_states)
    dv = np.zeros(env.n_states)
    grad = actor.zeros_like_params()
    ls = LagrangeState(cfg.lambda_init, cfg.lambda_max, cfg.lambda_schedule)
    window = deque(maxlen=cfg.lambda_window)
    rec = _Recorder(env, cfg, eval_rng)
    rec.start(ls.lam, actor)
    eta2, eta3 = cfg.actor_schedule, cfg.critic_schedule
    cap = env.max_episode_steps
    total = cfg.total_steps
    lam_trace = []

    steps = k = episodes = 0
    while steps < total:
        s = env.sample_start(env_u(), episodes + 1)
        ep = []
        while True:
            a = actor.sample(s, act_u())
            s2, r, c, term = env.step(s, a, env_u())
            ep.append(Step(s, a, r, c, s2, term))
            steps += 1
            if term or (cap is not None and len(ep) >= cap) or steps >= total:
                break
            s = s2
        finished = term or (cap is not None and len(ep) >= cap)

        traj = Trajectory(ep)
        lam = ls.lam
        failed = 1.0 if (term and ep[-1].penalty > 0) else 0.0
        tails = _tail_constraints([x.penalty for x in ep], failed, spec)
        g = 0.0
        for t in range(len(ep) - 1, -1, -1):
            st = ep[t]
            g = st.reward + gamma * g
            base = B[st.state] if cfg.baseline else 0.0
            actor.accumulate(grad, st.state, st.action, g - lam * tails[t] - base)
            if cfg.baseline:
                dv[st.state] += 2.0 * (g - base)
        actor.apply(grad, eta2(k), box, {x.state for x in ep})
        grad.fill(0.0)
        if cfg.baseline:
            B += eta3(k) * dv
            dv.fill(0.0)
        k += 1

        if finished:
            cval = evaluate_constraint(traj, spec)
            window.append(cval)
            ls = lambda_update(ls, sum(window) / len(window), alpha)
            episodes += 1
            lam_trace.append(ls.lam)
            rec.episode_done(steps, episodes, ls.lam, actor, sum(x.reward for x in ep), cval)

    rec.finish(steps, episodes, ls.lam, actor)
    return TrainRun("lagrange_mc", cfg, actor, CriticTable(B), ls, np.array(lam_trace),
                    rec.rows, steps, episodes)
