"""Single-step update rules shared by every training algorithm."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..cmdp import Trajectory, penalized_reward
from ..schedules import ProjectionBox, StepSchedule, project_lambda, project_theta

__all__ = [
    "CriticTable",
    "LagrangeState",
    "critic_regression_update",
    "critic_td_update",
    "gae_advantages",
    "lambda_update",
    "policy_gradient_step",
]


@dataclass(frozen=True)
class LagrangeState:
    lam: float = 0.0
    lam_max: float = math.inf
    schedule: StepSchedule | None = None
    update_count: int = 0

    def __post_init__(self):
        if self.lam_max < 0:
            raise ValueError("lambda_max must be non-negative")
        if not 0.0 <= self.lam <= self.lam_max:
            raise ValueError(f"lambda={self.lam} outside [0, {self.lam_max}]")


def lambda_update(ls: LagrangeState, jc_estimate: float, alpha: float) -> LagrangeState:
    """Projected ascent on the constraint violation ``jc_estimate - alpha``.

    A state without a schedule keeps its multiplier fixed.
    """
    if not math.isfinite(jc_estimate):
        raise ValueError("constraint estimate must be finite")
    lam = ls.lam
    if ls.schedule is not None:
        lam = project_lambda(lam + ls.schedule(ls.update_count) * (jc_estimate - alpha), ls.lam_max)
    return replace(ls, lam=lam, update_count=ls.update_count + 1)


class CriticTable:
    """Tabular state-value estimate of the penalized return."""

    def __init__(self, v):
        self.v = np.array(v, dtype=float)
        if self.v.ndim != 1:
            raise ValueError("critic table must be one-dimensional")
        if not np.all(np.isfinite(self.v)):
            raise ValueError("critic values must be finite")

    @classmethod
    def zeros(cls, n_states):
        return cls(np.zeros(n_states))

    def __call__(self, s):
        return self.v[s]

    def copy(self):
        return CriticTable(self.v)


def _flat_steps(batch: Sequence[Trajectory]):
    return [step for traj in batch for step in traj]


def policy_gradient_step(batch, actor, advantages, eta, box: ProjectionBox | None = None):
    """theta + eta * sum_t grad log pi(a_t|s_t) * A_t, projected into ``box``.

    The gradient is summed over every step of the batch, not averaged.
    ``advantages`` is a flat sequence aligned with the concatenated steps.
    """
    steps = _flat_steps(batch)
    adv = np.asarray(advantages, dtype=float).reshape(-1)
    if len(adv) != len(steps):
        raise ValueError(f"got {len(adv)} advantages for {len(steps)} steps")
    if eta <= 0:
        raise ValueError("actor step size must be positive")
    grad = np.zeros_like(actor.params)
    for step, a_t in zip(steps, adv):
        if a_t != 0.0:
            grad += a_t * actor.grad_log_prob(step.state, step.action)
    theta = actor.params + eta * grad
    if box is not None:
        theta = project_theta(theta, box)
    return actor.with_params(theta)


def critic_regression_update(critic: CriticTable, states, targets, eta, weights=None):
    """v - eta * d/dv sum_t w_t (y_t - V(s_t))**2 with the targets held fixed."""
    states = np.asarray(states, dtype=int)
    err = np.asarray(targets, dtype=float) - critic.v[states]
    if weights is not None:
        err = err * np.asarray(weights, dtype=float)
    grad = np.zeros_like(critic.v)
    np.add.at(grad, states, -2.0 * err)
    return CriticTable(critic.v - eta * grad)


def critic_td_update(batch, critic: CriticTable, lam, gamma, eta, weights=None):
    """One semi-gradient TD(0) step on the penalized reward.

    Targets are ``r - lam*c + gamma * V(s')``, with no bootstrap after a
    terminal step, all computed from the pre-update critic.  Optional
    per-step ``weights`` scale each squared error; with weights equal to the
    on-policy transition probabilities this applies the expected TD operator.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    steps = _flat_steps(batch)
    states = [st.state for st in steps]
    targets = [penalized_reward(st.reward, st.penalty, lam)
               + (0.0 if st.terminal else gamma * critic.v[st.next_state]) for st in steps]
    return critic_regression_update(critic, states, targets, eta, weights)


def gae_advantages(traj: Trajectory, critic: CriticTable, lam, gamma, tau):
    """Exponentially weighted TD residuals of the penalized reward.

    ``tau = 0`` gives one-step TD residuals; ``tau = 1`` gives the discounted
    return-to-go of ``r - lam*c`` (bootstrapped from V after a non-terminal
    last step) minus ``V(s_t)``.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    v = critic.v
    adv = np.zeros(len(traj))
    acc = 0.0
    for t in range(len(traj) - 1, -1, -1):
        st = traj[t]
        boot = 0.0 if st.terminal else gamma * v[st.next_state]
        delta = penalized_reward(st.reward, st.penalty, lam) + boot - v[st.state]
        acc = delta + gamma * tau * acc
        adv[t] = acc
    return adv
