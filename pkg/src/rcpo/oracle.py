"""Exact ground truth for small CMDPs.

Everything here is computed by linear algebra or exhaustive enumeration; no
sampling is involved.  The training code never imports this module, so it can
serve as an independent check on learned policies.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .cmdp import (
    CMDPValidationError,
    ConstraintKind,
    ConstraintSpec,
    TabularCMDP,
    check_policy,
    evaluate_policy_exact,
    evaluate_signal,
)

__all__ = [
    "LedgerEntry",
    "MixtureSolution",
    "OracleSolution",
    "exact_jc",
    "failure_probability_exact",
    "ledger_to_csv",
    "mean_value_exact",
    "policy_values",
    "solve_cmdp_enumeration",
    "solve_mdp",
]

FEASIBILITY_TOL = 1e-10
MAX_ENUMERATION = 10**6
MAX_MEAN_HORIZON = 64
LAMBDA_GRID = np.logspace(-3, 3, 64)


def solve_mdp(cmdp: TabularCMDP, lam: float = 0.0, max_iter: int = 10_000) -> np.ndarray:
    """Deterministic optimal policy for the reward ``r - lam * c`` (policy iteration).

    Ties are resolved toward the lowest action index; terminal states get action 0.
    """
    S, A = cmdp.n_states, cmdp.n_actions
    r_hat = cmdp.expected_reward() - lam * cmdp.expected_penalty()
    live = ~cmdp.terminal_mask
    actions = np.zeros(S, dtype=int)
    pi = np.zeros((S, A))
    for _ in range(max_iter):
        pi[:] = 0.0
        pi[np.arange(S), actions] = 1.0
        V = evaluate_signal(cmdp, pi, r_hat)
        Q = r_hat + cmdp.discount * np.einsum("ijk,k->ij", cmdp.transition, V)
        best = Q.max(axis=1, keepdims=True)
        tol = 1e-10 * max(1.0, float(np.max(np.abs(Q))))
        cand = np.argmax(Q >= best - tol, axis=1)
        # keep the current action unless another one is strictly better
        keep = Q[np.arange(S), actions] >= best[:, 0] - tol
        new = np.where(keep, actions, cand)
        new[~live] = 0
        if np.array_equal(new, actions):
            return pi
        actions = new
    raise ArithmeticError("policy iteration did not converge")


def _failure_exits(cmdp):
    """Probability of entering a terminal state through a penalised transition, per (s, a)."""
    term = cmdp.terminal_mask
    hit = (cmdp.penalty > 0) & term[None, None, :]
    out = np.sum(cmdp.transition * hit, axis=2)
    out[term] = 0.0
    return out


def failure_probability_exact(cmdp: TabularCMDP, policy, per_state=False):
    """Probability of being absorbed through a failure transition, starting from mu.

    A failure transition enters a terminal state with positive penalty.  The
    minimal non-negative solution of the absorption equations is returned, so
    policies that loop forever contribute zero.
    """
    if not cmdp.terminal_states:
        raise CMDPValidationError("failure probability needs absorbing states")
    pi = check_policy(policy, cmdp.n_states, cmdp.n_actions)
    live = np.flatnonzero(~cmdp.terminal_mask)
    x = np.sum(pi * _failure_exits(cmdp), axis=1)[live]
    Q = np.einsum("ij,ijk->ik", pi, cmdp.transition)[np.ix_(live, live)]
    # states that can reach a failure exit under pi
    can = x > 0
    while True:
        grown = can | (Q[:, can].sum(axis=1) > 0)
        if np.array_equal(grown, can):
            break
        can = grown
    f_live = np.zeros(len(live))
    if can.any():
        idx = np.flatnonzero(can)
        f_live[idx] = scipy.linalg.solve(np.eye(len(idx)) - Q[np.ix_(idx, idx)], x[idx])
    f = np.zeros(cmdp.n_states)
    f[live] = np.clip(f_live, 0.0, 1.0)
    return f if per_state else float(cmdp.initial_dist @ f)


def mean_value_exact(cmdp: TabularCMDP, policy, max_horizon=MAX_MEAN_HORIZON) -> float:
    """E[(1/T) sum_t c_t] for an episodic CMDP, T being the realised episode length.

    Backward recursion over (state, time) on two quantities: E[1/T] and the
    expected penalty-to-go divided by T.  Requires every episode from mu to
    terminate within ``max_horizon`` steps.
    """
    pi = check_policy(policy, cmdp.n_states, cmdp.n_actions)
    term = cmdp.terminal_mask
    M = np.einsum("ij,ijk->ik", pi, cmdp.transition)
    Mc = np.einsum("ij,ijk,ijk->ik", pi, cmdp.transition, cmdp.penalty)
    M[term] = 0.0
    Mc[term] = 0.0

    d = np.asarray(cmdp.initial_dist) * ~term
    horizon = 0
    while d.sum() > 0:
        if horizon >= max_horizon:
            raise CMDPValidationError(
                f"mean-value evaluation needs episodes ending within {max_horizon} steps")
        d = (d @ M) * ~term
        horizon += 1
    if horizon == 0:
        return 0.0

    g = np.zeros(cmdp.n_states)
    h = np.zeros(cmdp.n_states)
    for t in range(horizon - 1, -1, -1):
        G = np.where(term, 1.0 / (t + 1), g)
        H = np.where(term, 0.0, h)
        g, h = M @ G, Mc @ G + M @ H
    return float(cmdp.initial_dist @ h)


def exact_jc(cmdp: TabularCMDP, policy, spec: ConstraintSpec) -> float:
    if spec.kind is ConstraintKind.PROBABILISTIC:
        return failure_probability_exact(cmdp, policy)
    if spec.kind is ConstraintKind.MEAN_VALUE:
        return mean_value_exact(cmdp, policy)
    V = evaluate_signal(cmdp, policy, cmdp.expected_penalty(), discount=spec.discount)
    return float(cmdp.initial_dist @ V)


def policy_values(cmdp: TabularCMDP, policy, spec: ConstraintSpec):
    """Exact (J_R, J_C): discounted reward from mu and the constraint per ``spec``."""
    j_r = float(cmdp.initial_dist @ evaluate_policy_exact(cmdp, policy, "reward"))
    return j_r, exact_jc(cmdp, policy, spec)


class LedgerEntry(NamedTuple):
    policy_id: int
    j_r: float
    j_c: float
    feasible: bool


@dataclass(frozen=True, eq=False)
class MixtureSolution:
    """Trajectory-level mixture: follow ``policy_b`` w.p. ``weight``, else ``policy_a``."""

    value: float
    j_c: float
    weight: float
    policy_a: np.ndarray
    policy_b: np.ndarray
    lambdas: tuple


@dataclass(frozen=True, eq=False)
class OracleSolution:
    alpha: float
    feasible: bool
    best_feasible_value: float
    best_feasible_jc: float
    best_feasible_policy: np.ndarray | None
    best_feasible_id: int | None
    ledger: list = field(default_factory=list)
    mixture: MixtureSolution | None = None


def _policy_from_id(pid, live, n_states, n_actions):
    n = len(live)
    pi = np.zeros((n_states, n_actions))
    pi[:, 0] = 1.0
    for i in range(n - 1, -1, -1):
        pid, a = divmod(pid, n_actions)
        pi[live[i]] = 0.0
        pi[live[i], a] = 1.0
    return pi


def _discounted_batch(cmdp, live, acts, signal_sa, gamma, mu_live):
    """mu . V for a batch of deterministic policies (rows of ``acts``)."""
    n = len(live)
    P = cmdp.transition[live[None, :], acts][:, :, live]
    x = signal_sa[live[None, :], acts]
    A = np.eye(n)[None] - gamma * P
    V = np.linalg.solve(A, x[..., None])[..., 0]
    return V @ mu_live


def solve_cmdp_enumeration(cmdp: TabularCMDP, spec: ConstraintSpec,
                           max_policies=MAX_ENUMERATION, lagrangian_sweep=True,
                           chunk=4096) -> OracleSolution:
    """Enumerate every deterministic stationary policy and pick the best feasible one.

    Policies are numbered lexicographically by the actions taken in the
    non-terminal states (first state most significant); ties go to the lowest
    id.  A Lagrangian sweep over ``LAMBDA_GRID`` additionally reports the best
    feasible mixture of two adjacent unconstrained solutions, since CMDP
    optima may need randomisation.
    """
    S, A = cmdp.n_states, cmdp.n_actions
    live = np.flatnonzero(~cmdp.terminal_mask)
    n_pol = A ** len(live)
    if n_pol > max_policies:
        raise CMDPValidationError(
            f"{n_pol} deterministic policies exceed the enumeration bound {max_policies}")
    if spec.kind is ConstraintKind.MEAN_VALUE:
        # fails early on non-episodic instances
        mean_value_exact(cmdp, np.full((S, A), 1.0 / A))

    alpha = spec.threshold
    mu_live = cmdp.initial_dist[live]
    r_sa = cmdp.expected_reward()
    c_sa = cmdp.expected_penalty()
    powers = A ** np.arange(len(live) - 1, -1, -1)
    j_r = np.empty(n_pol)
    j_c = np.empty(n_pol)
    for lo in range(0, n_pol, chunk):
        ids = np.arange(lo, min(lo + chunk, n_pol))
        acts = (ids[:, None] // powers[None, :]) % A
        if len(live):
            j_r[ids] = _discounted_batch(cmdp, live, acts, r_sa, cmdp.discount, mu_live)
        else:
            j_r[ids] = 0.0
        if spec.kind is ConstraintKind.DISCOUNTED_SUM and spec.discount < 1 and len(live):
            j_c[ids] = _discounted_batch(cmdp, live, acts, c_sa, spec.discount, mu_live)
        else:
            for pid in ids.tolist():
                j_c[pid] = exact_jc(cmdp, _policy_from_id(pid, live, S, A), spec)

    feas = j_c <= alpha + FEASIBILITY_TOL
    ledger = [LedgerEntry(i, float(j_r[i]), float(j_c[i]), bool(feas[i])) for i in range(n_pol)]
    if feas.any():
        cand = np.flatnonzero(feas)
        best = int(cand[np.argmax(j_r[cand])])  # argmax returns the first, i.e. lowest id
        sol = dict(feasible=True, best_feasible_value=float(j_r[best]),
                   best_feasible_jc=float(j_c[best]),
                   best_feasible_policy=_policy_from_id(best, live, S, A), best_feasible_id=best)
    else:
        sol = dict(feasible=False, best_feasible_value=float("-inf"),
                   best_feasible_jc=float("nan"), best_feasible_policy=None,
                   best_feasible_id=None)
    mixture = _lagrangian_mixture(cmdp, spec) if lagrangian_sweep else None
    return OracleSolution(alpha=alpha, ledger=ledger, mixture=mixture, **sol)


def _lagrangian_mixture(cmdp, spec):
    alpha = spec.threshold
    pts = []
    for lam in LAMBDA_GRID:
        pi = solve_mdp(cmdp, float(lam))
        jr, jc = policy_values(cmdp, pi, spec)
        pts.append((float(lam), pi, jr, jc))
    best = None
    for lam, pi, jr, jc in pts:
        if jc <= alpha + FEASIBILITY_TOL and (best is None or jr > best.value):
            best = MixtureSolution(jr, jc, 0.0, pi, pi, (lam, lam))
    for (l1, p1, r1, c1), (l2, p2, r2, c2) in zip(pts, pts[1:]):
        f1, f2 = c1 <= alpha + FEASIBILITY_TOL, c2 <= alpha + FEASIBILITY_TOL
        if f1 == f2:
            continue
        (lf, pf, rf, cf), (li, pi_, ri, ci) = ((l1, p1, r1, c1), (l2, p2, r2, c2)) if f1 else \
            ((l2, p2, r2, c2), (l1, p1, r1, c1))
        w = (alpha - cf) / (ci - cf)
        value = (1 - w) * rf + w * ri
        if best is None or value > best.value:
            best = MixtureSolution(value, (1 - w) * cf + w * ci, w, pf, pi_, (lf, li))
    return best


def ledger_to_csv(solution: OracleSolution) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy_id", "j_r", "j_c", "feasible"])
    for e in solution.ledger:
        w.writerow([e.policy_id, repr(e.j_r), repr(e.j_c), int(e.feasible)])
    return buf.getvalue()
