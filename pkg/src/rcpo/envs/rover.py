"""Mars-rover grid world with a rock-crash failure constraint.

Cells are indexed ``row * width + col``; actions are up, down, left, right.
The chosen move happens with probability ``1 - slip``; with probability
``slip`` a direction is drawn uniformly from all four (so the chosen one gets
``1 - slip + slip/4`` in total).  Bumping into the border keeps the rover in
place.  Rocks and the goal are terminal.  Entering a rock costs a penalty of 1;
the reward channel only ever carries ``r_step`` (or ``r_goal`` on arrival).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ..cmdp import ConstraintSpec, TabularCMDP
from .base import Environment

__all__ = [
    "BUNDLED_LAYOUT_SEED",
    "MOVES",
    "RoverConfig",
    "default_rover_config",
    "generate_rover_layout",
    "parse_layout",
    "rover_build",
    "rover_env",
    "rover_reference_policies",
    "rover_restart_dist",
    "shortest_path_policy",
]

MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
ACTION_NAMES = ("up", "down", "left", "right")
BUNDLED_LAYOUT_SEED = 7


@dataclass(frozen=True)
class RoverConfig:
    width: int = 12
    height: int = 12
    rocks: frozenset = field(default_factory=frozenset)
    start: tuple = (0, 0)
    goal: tuple | None = None
    slip: float = 0.05
    r_step: float = -0.01
    r_goal: float = 0.0
    gamma: float = 0.99

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        goal = (0, self.width - 1) if self.goal is None else tuple(self.goal)
        object.__setattr__(self, "goal", goal)
        object.__setattr__(self, "start", tuple(self.start))
        object.__setattr__(self, "rocks", frozenset(tuple(r) for r in self.rocks))
        for name, cell in (("start", self.start), ("goal", goal)):
            if not self.inside(cell):
                raise ValueError(f"{name} {cell} lies outside the grid")
            if cell in self.rocks:
                raise ValueError(f"{name} {cell} is on a rock")
        if self.start == goal:
            raise ValueError("start and goal must differ")
        if any(not self.inside(r) for r in self.rocks):
            raise ValueError("rock outside the grid")
        if not 0.0 <= self.slip < 1.0:
            raise ValueError("slip must lie in [0, 1)")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.path_length() is None:
            raise ValueError("no rock-free path from start to goal")

    def inside(self, cell):
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    def index(self, cell):
        return cell[0] * self.width + cell[1]

    def cell(self, index):
        return divmod(index, self.width)

    @property
    def n_states(self):
        return self.width * self.height

    def terminal_cells(self):
        return self.rocks | {self.goal}

    def distances_to_goal(self):
        """Rock-free BFS distance of every cell to the goal (None if cut off)."""
        dist = {self.goal: 0}
        queue = deque([self.goal])
        while queue:
            cur = queue.popleft()
            for dr, dc in MOVES:
                nxt = (cur[0] + dr, cur[1] + dc)
                if self.inside(nxt) and nxt not in self.rocks and nxt not in dist:
                    dist[nxt] = dist[cur] + 1
                    queue.append(nxt)
        return dist

    def path_length(self):
        return self.distances_to_goal().get(self.start)

    def to_ascii(self) -> str:
        rows = []
        for r in range(self.height):
            row = []
            for c in range(self.width):
                cell = (r, c)
                row.append("S" if cell == self.start else "G" if cell == self.goal
                           else "#" if cell in self.rocks else ".")
            rows.append("".join(row))
        return "\n".join(rows) + "\n"

    @classmethod
    def from_ascii(cls, text: str, **params) -> "RoverConfig":
        return cls(**parse_layout(text), **params)


def parse_layout(text: str) -> dict:
    """Parse an ASCII map: ``S`` start, ``G`` goal, ``#`` rock, ``.`` free."""
    rows = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not rows:
        raise ValueError("empty layout")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError("layout rows must all have the same width")
    rocks, start, goal = set(), [], []
    for i, row in enumerate(rows):
        for j, ch in enumerate(row):
            if ch == "#":
                rocks.add((i, j))
            elif ch == "S":
                start.append((i, j))
            elif ch == "G":
                goal.append((i, j))
            elif ch != ".":
                raise ValueError(f"unknown layout character {ch!r} at row {i}, col {j}")
    if len(start) != 1 or len(goal) != 1:
        raise ValueError("layout needs exactly one S and one G")
    return dict(width=width, height=len(rows), rocks=frozenset(rocks), start=start[0], goal=goal[0])


def generate_rover_layout(seed, width=12, height=12, field_density=0.5, decay=0.25, **params):
    """Procedural layout where rock density grows toward the short route.

    The start and goal sit in the top corners.  The direct route runs along
    row 1 between two solid rock walls (rows 0 and 2); below it rocks are
    scattered with density ``field_density * decay**(row - 4)``, so routes
    further from the top are longer but safer.  The two outer columns on each
    side stay clear.
    """
    if width < 6 or height < 5:
        raise ValueError("layout generator needs at least a 6x5 grid")
    rng = np.random.default_rng(seed)
    inner = range(2, width - 2)
    rocks = {(0, c) for c in inner} | {(2, c) for c in inner}
    for r in range(4, height):
        p = field_density * decay ** (r - 4)
        for c in inner:
            if rng.random() < p:
                rocks.add((r, c))
    return RoverConfig(width=width, height=height, rocks=frozenset(rocks),
                       start=(0, 0), goal=(0, width - 1), **params)


def default_rover_config(**params) -> RoverConfig:
    """The bundled 12x12 layout (generated with ``BUNDLED_LAYOUT_SEED``)."""
    text = resources.files("rcpo.envs.data").joinpath("rover_12x12.txt").read_text()
    return RoverConfig.from_ascii(text, **params)


def rover_build(cfg: RoverConfig) -> TabularCMDP:
    W, S, A = cfg.width, cfg.n_states, len(MOVES)
    P = np.zeros((S, A, S))
    R = np.zeros((S, A, S))
    C = np.zeros((S, A, S))
    term = {cfg.index(c) for c in cfg.terminal_cells()}
    goal = cfg.index(cfg.goal)
    rock_idx = {cfg.index(c) for c in cfg.rocks}
    for s in range(S):
        if s in term:
            P[s, :, s] = 1.0
            continue
        r, c = cfg.cell(s)
        targets = []
        for dr, dc in MOVES:
            nr, nc = r + dr, c + dc
            targets.append(nr * W + nc if cfg.inside((nr, nc)) else s)
        for a in range(A):
            for d, nxt in enumerate(targets):
                P[s, a, nxt] += (1.0 - cfg.slip if d == a else 0.0) + cfg.slip / A
        R[s, :, :] = cfg.r_step
        R[s, :, goal] = cfg.r_goal
        C[s, :, list(rock_idx)] = 1.0
    mu = np.zeros(S)
    mu[cfg.index(cfg.start)] = 1.0
    return TabularCMDP(P, R, C, mu, cfg.gamma, frozenset(term))


def rover_restart_dist(iteration: int, cfg: RoverConfig) -> np.ndarray:
    """Uniform over non-terminal cells w.p. 1/iteration, the start cell otherwise."""
    if iteration < 1:
        raise ValueError("iteration must be >= 1")
    term = {cfg.index(c) for c in cfg.terminal_cells()}
    live = [s for s in range(cfg.n_states) if s not in term]
    mu = np.zeros(cfg.n_states)
    mu[live] = (1.0 / iteration) / len(live)
    mu[cfg.index(cfg.start)] += 1.0 - 1.0 / iteration
    return mu


def rover_env(cfg: RoverConfig | None = None, alpha=0.5, max_episode_steps=500, restart=True,
              restart_period=5120):
    """Rover environment with a probabilistic failure constraint at level ``alpha``.

    With ``restart`` on, training episodes start from ``rover_restart_dist``
    where one iteration spans ``restart_period`` episodes.
    """
    if restart_period < 1:
        raise ValueError("restart_period must be >= 1")
    cfg = default_rover_config() if cfg is None else cfg
    cmdp = rover_build(cfg)
    restart_fn = None
    if restart:
        def restart_fn(episode):
            return rover_restart_dist(1 + (episode - 1) // restart_period, cfg)
    return Environment(cmdp, ConstraintSpec.probabilistic(alpha),
                       max_episode_steps=max_episode_steps, restart=restart_fn, name="rover")


def shortest_path_policy(cfg: RoverConfig) -> np.ndarray:
    """Deterministic policy stepping to a neighbour with the smallest BFS distance.

    Ties go to the lowest action index.  Slip is ignored.
    """
    dist = cfg.distances_to_goal()
    pi = np.zeros((cfg.n_states, len(MOVES)))
    for s in range(cfg.n_states):
        r, c = cfg.cell(s)
        best, best_a = None, 0
        for a, (dr, dc) in enumerate(MOVES):
            nxt = (r + dr, c + dc)
            d = dist.get(nxt) if cfg.inside(nxt) else None
            if d is not None and (best is None or d < best):
                best, best_a = d, a
        pi[s, best_a] = 1.0
    return pi


REFERENCE_CRASH_COSTS = {"intermediate": 0.6, "safest": 10.0}


def rover_reference_policies(cfg: RoverConfig) -> dict:
    """Shortest-path, intermediate and safest deterministic reference policies.

    The last two are optimal for the reward with a fixed crash cost
    (``REFERENCE_CRASH_COSTS``), solved exactly.
    """
    from ..oracle import solve_mdp

    cmdp = rover_build(cfg)
    out = {"shortest": shortest_path_policy(cfg)}
    for name, cost in REFERENCE_CRASH_COSTS.items():
        out[name] = solve_mdp(cmdp, cost)
    return out
