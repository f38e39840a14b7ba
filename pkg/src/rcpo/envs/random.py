"""Seeded random tabular CMDPs for oracle-backed tests."""

from __future__ import annotations

import numpy as np

from ..cmdp import TabularCMDP

__all__ = ["random_cmdp", "MAX_TABLE_SIZE"]

MAX_TABLE_SIZE = 10**4


def random_cmdp(seed, n_states, n_actions, penalty_density, gamma=0.9) -> TabularCMDP:
    """Normalised positive random transition rows, U[0, 1] rewards, unit Bernoulli penalties.

    No terminal states; the initial distribution is random as well.
    """
    if n_states < 1 or n_actions < 1:
        raise ValueError("need at least one state and one action")
    if n_states * n_actions > MAX_TABLE_SIZE:
        raise ValueError(f"n_states * n_actions exceeds {MAX_TABLE_SIZE}")
    if not 0.0 <= penalty_density <= 1.0:
        raise ValueError("penalty_density must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    P = rng.random((n_states, n_actions, n_states)) + 1e-3
    P /= P.sum(axis=2, keepdims=True)
    R = rng.random((n_states, n_actions, n_states))
    C = (rng.random((n_states, n_actions)) < penalty_density).astype(float)
    mu = rng.random(n_states) + 1e-3
    mu /= mu.sum()
    return TabularCMDP(P, R, C, mu, gamma)
