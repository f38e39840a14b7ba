"""Episode sampling and Monte-Carlo policy evaluation."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .cmdp import Step, Trajectory, _mean_stderr, evaluate_constraint

__all__ = ["EvalResult", "UniformStream", "as_generator", "evaluate_policy", "run_episode"]

DEFAULT_EPISODE_CAP = 10_000


class UniformStream:
    """Buffered U[0, 1) draws from a numpy Generator."""

    def __init__(self, rng: np.random.Generator, block: int = 8192):
        self.rng = rng
        self.block = block
        self._buf = []
        self._i = 0

    def __call__(self) -> float:
        if self._i >= len(self._buf):
            self._buf = self.rng.random(self.block).tolist()
            self._i = 0
        u = self._buf[self._i]
        self._i += 1
        return u


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class _FrozenTabular:
    """Sampling view of a probability table (no parameters, no caching)."""

    def __init__(self, table):
        cum = np.cumsum(np.asarray(table, dtype=float), axis=1)
        cum[:, -1] = 1.0
        self._cum = cum.tolist()

    def sample(self, s, u):
        row = self._cum[s]
        for a, c in enumerate(row):
            if u < c:
                return a
        return len(row) - 1


def _sampler(policy):
    if hasattr(policy, "sample"):
        return policy
    return _FrozenTabular(policy)


def run_episode(env, policy, draw, start_state=None, episode=None):
    """Roll out one episode; ``policy`` is an actor or an (S, A) probability table.

    ``draw`` is a zero-argument callable returning U[0, 1) draws.  Episodes end
    at a terminal state or after ``env.max_episode_steps`` steps.
    """
    pol = _sampler(policy)
    s = env.sample_start(draw(), episode) if start_state is None else start_state
    cap = env.max_episode_steps or DEFAULT_EPISODE_CAP
    steps = []
    for _ in range(cap):
        a = pol.sample(s, draw())
        s2, r, c, term = env.step(s, a, draw())
        steps.append(Step(s, a, r, c, s2, term))
        if term:
            break
        s = s2
    return Trajectory(steps)


class EvalResult(NamedTuple):
    reward_mean: float
    constraint_mean: float
    constraint_stderr: float


def evaluate_policy(env, policy, episodes: int, seed=0) -> EvalResult:
    """Monte-Carlo evaluation from the canonical start distribution.

    Actions are sampled from the policy; nothing is learned.  The reward is
    the undiscounted episode sum.  One episode reports a zero standard error.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    draw = UniformStream(as_generator(seed))
    pol = _sampler(policy)
    rewards = np.empty(episodes)
    cons = np.empty(episodes)
    spec = env.constraint
    for i in range(episodes):
        traj = run_episode(env, pol, draw)
        rewards[i] = sum(st.reward for st in traj)
        cons[i] = evaluate_constraint(traj, spec)
    c_mean, c_err = _mean_stderr(cons)
    return EvalResult(float(rewards.mean()), c_mean, c_err)
