"""A small mean-torque constrained chain.

States ``0 .. T-1`` are time steps and state ``T`` is terminal.  Choosing
torque level ``u`` earns ``gain * u`` and costs a penalty of ``u``; every
episode therefore lasts exactly ``T`` steps and the mean-value constraint is
the average applied torque.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..cmdp import ConstraintSpec, TabularCMDP
from .base import Environment

__all__ = ["TorqueToyConfig", "torque_toy_build", "torque_toy_env", "torque_toy_optimum"]


@dataclass(frozen=True)
class TorqueToyConfig:
    levels: tuple = (0.0, 1.0)
    horizon: int = 4
    gain: float = 1.0
    alpha: float = 0.25
    gamma: float = 0.99

    def __post_init__(self):
        levels = tuple(float(u) for u in self.levels)
        object.__setattr__(self, "levels", levels)
        if not levels:
            raise ValueError("need at least one torque level")
        if any(not 0.0 <= u <= 1.0 for u in levels):
            raise ValueError("torque levels must lie in [0, 1]")
        if list(levels) != sorted(levels):
            raise ValueError("torque levels must be sorted")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")

    @property
    def n_states(self):
        return self.horizon + 1


def torque_toy_build(cfg: TorqueToyConfig) -> TabularCMDP:
    T, A = cfg.horizon, len(cfg.levels)
    S = T + 1
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    C = np.zeros((S, A))
    u = np.array(cfg.levels)
    for t in range(T):
        P[t, :, t + 1] = 1.0
        R[t] = cfg.gain * u
        C[t] = u
    P[T, :, T] = 1.0
    mu = np.zeros(S)
    mu[0] = 1.0
    return TabularCMDP(P, R, C, mu, cfg.gamma, frozenset({T}))


def torque_toy_env(cfg: TorqueToyConfig | None = None) -> Environment:
    cfg = TorqueToyConfig() if cfg is None else cfg
    return Environment(torque_toy_build(cfg), ConstraintSpec.mean_value(cfg.alpha),
                       name="torque_toy")


def torque_toy_optimum(cfg: TorqueToyConfig):
    """Closed-form best feasible (mean torque, discounted reward).

    Only expected torques matter and each step can realise any expectation in
    ``[min level, max level]`` by mixing, so the torque budget above the
    minimum is spent on the earliest (least discounted) steps first.
    Returns ``None`` when even the minimum torque violates the threshold.
    """
    lo, hi = cfg.levels[0], cfg.levels[-1]
    T = cfg.horizon
    if lo > cfg.alpha + 1e-12:
        return None
    weights = cfg.gamma ** np.arange(T)
    if cfg.gain <= 0:
        use = np.full(T, lo)
    else:
        budget = T * (min(cfg.alpha, hi) - lo)
        use = np.full(T, lo)
        for t in range(T):
            extra = min(hi - lo, budget)
            use[t] += extra
            budget -= extra
            if budget <= 0:
                break
    return float(use.mean()), float(cfg.gain * weights @ use)
