"""Sampling wrapper around a tabular CMDP."""

from __future__ import annotations

import bisect
from typing import Callable

import numpy as np

from ..cmdp import ConstraintSpec, TabularCMDP

__all__ = ["Environment"]


class Environment:
    """A tabular CMDP plus the constraint it is trained against.

    Stepping is a pure function of ``(state, action, u)`` with ``u`` a uniform
    draw in [0, 1), so the object carries no mutable state.  ``restart`` maps a
    1-based training episode index to the start distribution used for that
    episode; evaluation always starts from ``cmdp.initial_dist``.
    """

    def __init__(self, cmdp: TabularCMDP, constraint: ConstraintSpec, *,
                 max_episode_steps: int | None = None,
                 restart: Callable[[int], np.ndarray] | None = None,
                 name: str = "cmdp"):
        if max_episode_steps is not None and max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")
        self.cmdp = cmdp
        self.constraint = constraint
        self.max_episode_steps = max_episode_steps
        self.restart = restart
        self.name = name
        self.n_states = cmdp.n_states
        self.n_actions = cmdp.n_actions
        self.gamma = cmdp.discount
        term = cmdp.terminal_states
        self.is_terminal = [s in term for s in range(cmdp.n_states)]
        self._table = []
        P, R, C = cmdp.transition, cmdp.reward, cmdp.penalty
        for s in range(cmdp.n_states):
            row = []
            for a in range(cmdp.n_actions):
                nxt = np.flatnonzero(P[s, a] > 0)
                cum = np.cumsum(P[s, a, nxt])
                cum[-1] = 1.0
                row.append((nxt.tolist(), cum.tolist(), R[s, a, nxt].tolist(),
                            C[s, a, nxt].tolist(), [self.is_terminal[n] for n in nxt]))
            self._table.append(row)
        self._canonical_cum = self._cumulative(cmdp.initial_dist)

    @staticmethod
    def _cumulative(dist):
        cum = np.cumsum(np.asarray(dist, dtype=float)).tolist()
        cum[-1] = 1.0
        return cum

    def start_dist(self, episode: int) -> np.ndarray:
        if self.restart is None:
            return np.asarray(self.cmdp.initial_dist)
        return self.restart(episode)

    def sample_start(self, u: float, episode: int | None = None) -> int:
        """Draw a start state; ``episode=None`` means the canonical distribution."""
        if episode is None or self.restart is None:
            cum = self._canonical_cum
        else:
            cum = self._cumulative(self.restart(episode))
        return bisect.bisect_right(cum, u)

    def step(self, state: int, action: int, u: float):
        """Return ``(next_state, reward, penalty, terminal)``."""
        nxt, cum, rew, pen, term = self._table[state][action]
        i = bisect.bisect_right(cum, u)
        return nxt[i], rew[i], pen[i], term[i]
