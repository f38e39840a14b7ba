"""Tabular constrained MDPs, trajectories and exact policy evaluation.

A :class:`TabularCMDP` is the finite tuple ``(S, A, R, P, mu, gamma)`` plus a
non-negative penalty channel.  Rewards are stored per ``(s, a, s')``.  The
penalty is stored per ``(s, a, s')`` as well so that events such as "entered
a rock" can be expressed under stochastic dynamics; a ``(S, A)`` table is
broadcast over next states on construction.

Terminal states are absorbing and carry zero value for every signal.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.linalg

__all__ = [
    "CMDPValidationError",
    "ConstraintKind",
    "ConstraintSpec",
    "PenalizedValueTable",
    "Step",
    "TabularCMDP",
    "Trajectory",
    "check_policy",
    "discounted_return",
    "dump_cmdp",
    "estimate_jc",
    "evaluate_constraint",
    "evaluate_policy_exact",
    "evaluate_signal",
    "load_cmdp",
    "penalized_reward",
    "penalized_value_exact",
    "read_cmdp",
    "write_cmdp",
]

PROB_TOL = 1e-12
DIRECT_SOLVE_MAX_STATES = 512
VI_TOL = 1e-12
VI_MAX_SWEEPS = 10**6


class CMDPValidationError(ValueError):
    """Raised for ill-formed CMDPs, policies or trajectories."""


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TabularCMDP:
    transition: np.ndarray
    reward: np.ndarray
    penalty: np.ndarray
    initial_dist: np.ndarray
    discount: float
    terminal_states: frozenset = frozenset()

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise CMDPValidationError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A, _ = P.shape
        if S < 1 or A < 1:
            raise CMDPValidationError("need at least one state and one action")
        R = np.asarray(self.reward, dtype=float)
        if R.shape == (S, A):
            R = np.broadcast_to(R[:, :, None], (S, A, S))
        if R.shape != (S, A, S):
            raise CMDPValidationError(f"reward must have shape (S, A, S) or (S, A), got {R.shape}")
        C = np.asarray(self.penalty, dtype=float)
        if C.shape == (S, A):
            C = np.broadcast_to(C[:, :, None], (S, A, S))
        if C.shape != (S, A, S):
            raise CMDPValidationError(f"penalty must have shape (S, A, S) or (S, A), got {C.shape}")
        mu = np.asarray(self.initial_dist, dtype=float)
        if mu.shape != (S,):
            raise CMDPValidationError(f"initial_dist must have shape ({S},), got {mu.shape}")

        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(R)) and np.all(np.isfinite(C))):
            raise CMDPValidationError("tables must be finite")
        if np.any(P < 0) or np.any(P > 1):
            raise CMDPValidationError("transition probabilities must lie in [0, 1]")
        rowsum = P.sum(axis=2)
        bad = np.argwhere(np.abs(rowsum - 1.0) > PROB_TOL)
        if len(bad):
            s, a = bad[0]
            raise CMDPValidationError(
                f"P(.|s={s}, a={a}) sums to {rowsum[s, a]!r}, expected 1")
        if np.any(C < 0):
            raise CMDPValidationError("penalties must be non-negative")
        if np.any(mu < 0) or np.any(mu > 1) or abs(mu.sum() - 1.0) > PROB_TOL:
            raise CMDPValidationError("initial_dist must be a probability vector")
        gamma = float(self.discount)
        if not 0.0 <= gamma < 1.0:
            raise CMDPValidationError(f"discount must lie in [0, 1), got {gamma}")
        term = frozenset(int(s) for s in self.terminal_states)
        if any(s < 0 or s >= S for s in term):
            raise CMDPValidationError("terminal state index out of range")

        object.__setattr__(self, "transition", _readonly(P))
        object.__setattr__(self, "reward", _readonly(R))
        object.__setattr__(self, "penalty", _readonly(C))
        object.__setattr__(self, "initial_dist", _readonly(mu))
        object.__setattr__(self, "discount", gamma)
        object.__setattr__(self, "terminal_states", term)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def terminal_mask(self) -> np.ndarray:
        m = np.zeros(self.n_states, dtype=bool)
        m[list(self.terminal_states)] = True
        return m

    def expected_reward(self) -> np.ndarray:
        """r(s, a) = sum_s' P(s'|s,a) r(s,a,s'), zero on terminal states."""
        out = np.einsum("ijk,ijk->ij", self.transition, self.reward)
        out[self.terminal_mask] = 0.0
        return out

    def expected_penalty(self) -> np.ndarray:
        out = np.einsum("ijk,ijk->ij", self.transition, self.penalty)
        out[self.terminal_mask] = 0.0
        return out

    def penalty_depends_on_next_state(self) -> bool:
        return not np.all(self.penalty == self.penalty[:, :, :1])

    def with_initial_dist(self, mu) -> "TabularCMDP":
        return TabularCMDP(self.transition, self.reward, self.penalty, mu,
                           self.discount, self.terminal_states)

    def with_penalty(self, penalty) -> "TabularCMDP":
        return TabularCMDP(self.transition, self.reward, penalty, self.initial_dist,
                           self.discount, self.terminal_states)

    def __eq__(self, other):
        if not isinstance(other, TabularCMDP):
            return NotImplemented
        return (self.discount == other.discount
                and self.terminal_states == other.terminal_states
                and np.array_equal(self.transition, other.transition)
                and np.array_equal(self.reward, other.reward)
                and np.array_equal(self.penalty, other.penalty)
                and np.array_equal(self.initial_dist, other.initial_dist))

    __hash__ = None


class ConstraintKind(enum.Enum):
    DISCOUNTED_SUM = "discounted"
    MEAN_VALUE = "mean"
    PROBABILISTIC = "probabilistic"


@dataclass(frozen=True)
class ConstraintSpec:
    """How per-step penalties aggregate into a trajectory constraint ``C``.

    ``discount`` is only used by ``DISCOUNTED_SUM``.
    """

    kind: ConstraintKind
    threshold: float
    discount: float = 1.0

    def __post_init__(self):
        kind = ConstraintKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if not math.isfinite(self.threshold):
            raise ValueError("threshold must be finite")
        if kind is ConstraintKind.PROBABILISTIC and not 0.0 < self.threshold < 1.0:
            raise ValueError("probabilistic threshold must lie in (0, 1)")
        if kind is ConstraintKind.DISCOUNTED_SUM and not 0.0 <= self.discount <= 1.0:
            raise ValueError("constraint discount must lie in [0, 1]")

    @classmethod
    def discounted(cls, threshold, discount):
        return cls(ConstraintKind.DISCOUNTED_SUM, threshold, discount)

    @classmethod
    def mean_value(cls, threshold):
        return cls(ConstraintKind.MEAN_VALUE, threshold)

    @classmethod
    def probabilistic(cls, threshold):
        return cls(ConstraintKind.PROBABILISTIC, threshold)


class Step(NamedTuple):
    state: int
    action: int
    reward: float
    penalty: float
    next_state: int
    terminal: bool = False


class Trajectory(tuple):
    """An immutable, non-empty sequence of :class:`Step` records.

    Only the last step may carry ``terminal=True``.  A trajectory whose last
    step is not terminal is a truncated episode or a rollout segment.
    """

    def __new__(cls, steps: Iterable):
        steps = tuple(s if isinstance(s, Step) else Step(*s) for s in steps)
        if not steps:
            raise CMDPValidationError("trajectory must be non-empty")
        if any(s.terminal for s in steps[:-1]):
            raise CMDPValidationError("terminal flag is only allowed on the last step")
        return super().__new__(cls, steps)

    @property
    def terminated(self) -> bool:
        return bool(self[-1].terminal)

    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self], dtype=float)

    def penalties(self) -> np.ndarray:
        return np.array([s.penalty for s in self], dtype=float)

    def __repr__(self):
        return f"Trajectory(len={len(self)}, terminated={self.terminated})"


def check_policy(policy, n_states, n_actions) -> np.ndarray:
    pi = np.asarray(policy, dtype=float)
    if pi.shape != (n_states, n_actions):
        raise CMDPValidationError(
            f"policy must have shape ({n_states}, {n_actions}), got {pi.shape}")
    if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > 1e-9):
        raise CMDPValidationError("policy rows must be probability distributions")
    return pi


def _solve_fixed_point(P_pi, x_pi, gamma, method):
    """Solve V = x_pi + gamma P_pi V for a (sub-)stochastic P_pi."""
    n = len(x_pi)
    if method == "auto":
        method = "direct" if n <= DIRECT_SOLVE_MAX_STATES else "iterate"
    if method == "direct":
        return scipy.linalg.solve(np.eye(n) - gamma * P_pi, x_pi)
    if method != "iterate":
        raise ValueError(f"unknown method {method!r}")
    v = np.zeros(n)
    for _ in range(VI_MAX_SWEEPS):
        nxt = x_pi + gamma * (P_pi @ v)
        if np.max(np.abs(nxt - v)) < VI_TOL:
            return nxt
        v = nxt
    raise ArithmeticError("value iteration did not reach the residual tolerance")


def evaluate_signal(cmdp: TabularCMDP, policy, signal_sa, discount=None, method="auto"):
    """Exact discounted value of an arbitrary per-(s, a) signal under ``policy``.

    Terminal states are fixed at zero; the linear system is solved on the
    remaining states only.
    """
    pi = check_policy(policy, cmdp.n_states, cmdp.n_actions)
    gamma = cmdp.discount if discount is None else float(discount)
    x = np.asarray(signal_sa, dtype=float)
    live = ~cmdp.terminal_mask
    V = np.zeros(cmdp.n_states)
    if not live.any():
        return V
    P_pi = np.einsum("ij,ijk->ik", pi, cmdp.transition)[np.ix_(live, live)]
    x_pi = np.sum(pi * x, axis=1)[live]
    if gamma >= 1.0:
        # undiscounted evaluation is only well posed for proper policies
        method = "direct"
    V[live] = _solve_fixed_point(P_pi, x_pi, gamma, method)
    return V


def evaluate_policy_exact(cmdp: TabularCMDP, policy, signal="reward", method="auto"):
    """V^pi for the reward channel, or the discounted guiding penalty V^pi_{C_gamma}."""
    if signal == "reward":
        x = cmdp.expected_reward()
    elif signal == "penalty":
        x = cmdp.expected_penalty()
    else:
        raise ValueError(f"signal must be 'reward' or 'penalty', got {signal!r}")
    return evaluate_signal(cmdp, policy, x, method=method)


def _channel(traj, signal):
    if signal == "reward":
        return traj.rewards()
    if signal == "penalty":
        return traj.penalties()
    raise ValueError(f"signal must be 'reward' or 'penalty', got {signal!r}")


def discounted_return(traj: Trajectory, gamma: float, signal="reward") -> float:
    if not len(traj):
        raise CMDPValidationError("trajectory must be non-empty")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    x = _channel(traj, signal)
    total = 0.0
    for v in reversed(x.tolist()):
        total = v + gamma * total
    return total


def evaluate_constraint(traj: Trajectory, spec: ConstraintSpec) -> float:
    if not len(traj):
        raise CMDPValidationError("trajectory must be non-empty")
    if spec.kind is ConstraintKind.DISCOUNTED_SUM:
        return discounted_return(traj, spec.discount, "penalty")
    if spec.kind is ConstraintKind.MEAN_VALUE:
        return float(np.mean(traj.penalties()))
    last = traj[-1]
    return 1.0 if (last.terminal and last.penalty > 0) else 0.0


def estimate_jc(trajs: Sequence[Trajectory], spec: ConstraintSpec):
    """Monte-Carlo estimate of J_C: (sample mean, standard error).

    A single trajectory reports a standard error of 0.
    """
    if not len(trajs):
        raise ValueError("need at least one trajectory")
    values = np.array([evaluate_constraint(t, spec) for t in trajs])
    return _mean_stderr(values)


def _mean_stderr(values):
    values = np.asarray(values, dtype=float)
    n = len(values)
    mean = float(values.mean())
    if n < 2:
        return mean, 0.0
    return mean, float(values.std(ddof=1) / math.sqrt(n))


def penalized_reward(r, c, lam):
    """r - lam * c."""
    if np.any(np.asarray(lam) < 0):
        raise ValueError("lambda must be non-negative")
    return r - lam * c


@dataclass(frozen=True, eq=False)
class PenalizedValueTable:
    v_r: np.ndarray
    v_c_gamma: np.ndarray
    lam: float
    v_hat: np.ndarray


def penalized_value_exact(cmdp: TabularCMDP, policy, lam: float, method="auto"):
    """V_R, V_{C_gamma} and the penalized value under a fixed multiplier.

    The penalized value is obtained by evaluating ``r - lam * c`` directly and
    cross-checked against ``V_R - lam * V_{C_gamma}``.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    v_r = evaluate_policy_exact(cmdp, policy, "reward", method)
    v_c = evaluate_policy_exact(cmdp, policy, "penalty", method)
    r_hat = penalized_reward(cmdp.expected_reward(), cmdp.expected_penalty(), lam)
    v_hat = evaluate_signal(cmdp, policy, r_hat, method=method)
    combined = v_r - lam * v_c
    scale = max(1.0, float(np.max(np.abs(v_r))), float(lam * np.max(np.abs(v_c))))
    if np.max(np.abs(v_hat - combined)) > 1e-10 * scale:
        raise ArithmeticError("penalized value does not match V_R - lambda * V_C")
    for a in (v_r, v_c, v_hat):
        a.setflags(write=False)
    return PenalizedValueTable(v_r=v_r, v_c_gamma=v_c, lam=float(lam), v_hat=v_hat)


# -- plain-text matrix format ------------------------------------------------

_BLOCKS = ("P", "R", "C", "MU", "TERM")


def _fmt(x):
    x = float(x)
    if x == 0.0:
        return "0"
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def dump_cmdp(cmdp: TabularCMDP) -> str:
    S, A = cmdp.n_states, cmdp.n_actions
    lines = [f"cmdp v1 {S} {A} {_fmt(cmdp.discount)}"]

    def block(name, rows):
        lines.append(name)
        lines.extend(" ".join(_fmt(v) for v in row) for row in rows)

    block("P", cmdp.transition.reshape(S * A, S))
    block("R", cmdp.reward.reshape(S * A, S))
    if cmdp.penalty_depends_on_next_state():
        block("C", cmdp.penalty.reshape(S * A, S))
    else:
        block("C", cmdp.penalty[:, :, 0])
    block("MU", [cmdp.initial_dist])
    block("TERM", [[1 if s in cmdp.terminal_states else 0 for s in range(S)]])
    return "\n".join(lines) + "\n"


def load_cmdp(text: str) -> TabularCMDP:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise CMDPValidationError("empty cmdp file")
    head = lines[0].split()
    if len(head) != 5 or head[:2] != ["cmdp", "v1"]:
        raise CMDPValidationError(f"bad header line: {lines[0]!r}")
    try:
        S, A, gamma = int(head[2]), int(head[3]), float(head[4])
    except ValueError as exc:
        raise CMDPValidationError(f"bad header line: {lines[0]!r}") from exc

    blocks, current = {}, None
    for ln in lines[1:]:
        if ln in _BLOCKS:
            if ln in blocks:
                raise CMDPValidationError(f"duplicate block {ln}")
            current = blocks.setdefault(ln, [])
            continue
        if current is None:
            raise CMDPValidationError(f"data before first block: {ln!r}")
        try:
            current.extend(float(tok) for tok in ln.split())
        except ValueError as exc:
            raise CMDPValidationError(f"non-numeric entry in line {ln!r}") from exc
    missing = [b for b in _BLOCKS if b not in blocks]
    if missing:
        raise CMDPValidationError(f"missing blocks: {', '.join(missing)}")

    def take(name, *shapes):
        vals = np.array(blocks[name])
        for shape in shapes:
            if vals.size == int(np.prod(shape)):
                return vals.reshape(shape)
        raise CMDPValidationError(
            f"block {name} has {vals.size} values, expected one of "
            f"{[int(np.prod(s)) for s in shapes]}")

    P = take("P", (S, A, S))
    R = take("R", (S, A, S), (S, A))
    C = take("C", (S, A), (S, A, S))
    mu = take("MU", (S,))
    term = take("TERM", (S,))
    if not np.all((term == 0) | (term == 1)):
        raise CMDPValidationError("TERM entries must be 0 or 1")
    return TabularCMDP(P, R, C, mu, gamma, frozenset(np.flatnonzero(term).tolist()))


def write_cmdp(cmdp: TabularCMDP, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump_cmdp(cmdp))


def read_cmdp(path) -> TabularCMDP:
    with open(path) as fh:
        return load_cmdp(fh.read())
