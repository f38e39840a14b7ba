"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line through ``acceptance_report``; the lines
are repeated in the terminal summary.  The rover runs dominate the runtime
(roughly 15 minutes on one core), and the RCPO runs at alpha = 0.5 are shared
between criteria 4 and 5.
"""

import time

import numpy as np
import pytest

from conftest import random_policy
from rcpo.agents import (
    CriticTable,
    DenseSoftmaxPolicy,
    SoftmaxPolicy,
    TrainConfig,
    critic_td_update,
    lagrange_mc_train,
    rcpo_train,
    reward_shaping_train,
)
from rcpo.cmdp import (
    ConstraintSpec,
    Step,
    Trajectory,
    evaluate_signal,
    penalized_reward,
    penalized_value_exact,
)
from rcpo.envs import (
    Environment,
    TorqueToyConfig,
    random_cmdp,
    rover_env,
    torque_toy_build,
    torque_toy_env,
)
from rcpo.harness import parse_config, run_experiment
from rcpo.oracle import (
    LAMBDA_GRID,
    failure_probability_exact,
    policy_values,
    solve_cmdp_enumeration,
    solve_mdp,
)
from rcpo.schedules import StepSchedule, Verdict, parse_schedule, validate_timescales

SEEDS = range(5)
ROVER_STEPS = 2 * 10**6


def rover_cfg(seed, alpha):
    return TrainConfig(
        total_steps=ROVER_STEPS,
        actor_schedule=parse_schedule("const:5e-2"),
        critic_schedule=parse_schedule("const:2e-1"),
        lambda_schedule=parse_schedule("const:2.5e-5"),
        lambda_init=0.6,
        rollout=5,
        seed=seed,
        eval_every=5120,
        eval_episodes=1024,
        constraint=ConstraintSpec.probabilistic(alpha),
    )


@pytest.fixture(scope="module")
def rover_runs():
    """RCPO and Lagrange-MC runs on the rover, computed lazily and cached."""
    cache = {}

    def get(algo, alpha, seed):
        key = (algo, alpha, seed)
        if key not in cache:
            env = rover_env(alpha=alpha)
            train = rcpo_train if algo == "rcpo" else lagrange_mc_train
            cache[key] = train(env, rover_cfg(seed, alpha))
        return cache[key]

    return get


# -- 1 ---------------------------------------------------------------------------------

def test_criterion_1_penalized_identity(acceptance_report):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(100):
        S, A = int(rng.integers(1, 21)), int(rng.integers(1, 5))
        cmdp = random_cmdp(1000 + i, S, A, float(rng.uniform(0, 1)), float(rng.uniform(0, 0.99)))
        pi = random_policy(rng, S, A)
        lam = float(rng.uniform(0, 10))
        r_hat = penalized_reward(cmdp.expected_reward(), cmdp.expected_penalty(), lam)
        v_hat = evaluate_signal(cmdp, pi, r_hat)
        # independent dense solves for the two channels
        P = np.einsum("sa,sat->st", pi, cmdp.transition)
        M = np.eye(S) - cmdp.discount * P
        v_r = np.linalg.solve(M, (pi * cmdp.expected_reward()).sum(axis=1))
        v_c = np.linalg.solve(M, (pi * cmdp.expected_penalty()).sum(axis=1))
        worst = max(worst, float(np.max(np.abs(v_hat - (v_r - lam * v_c)))))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 10
    acceptance_report(1, ok, f"max |V_hat - (V_R - lam V_C)| = {worst:.2e}, {elapsed:.2f}s")
    assert ok


# -- 2 ---------------------------------------------------------------------------------

def _surrogate(actor, steps, adv):
    return sum(actor.log_prob(s.state, s.action) * a for s, a in zip(steps, adv))


def test_criterion_2_gradient_oracle(acceptance_report):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst, h = 0.0, 1e-5
    for i in range(20):
        S, A = int(rng.integers(2, 7)), int(rng.integers(2, 5))
        if i % 2 == 0:
            actor = SoftmaxPolicy(rng.normal(0, 2, (S, A)))
        else:
            H = int(rng.integers(2, 6))
            actor = DenseSoftmaxPolicy(rng.normal(0, 0.7, S * H + H + H * A + A), S, H, A)
        steps = [Step(int(rng.integers(S)), int(rng.integers(A)), 0.0, 0.0, int(rng.integers(S)))
                 for _ in range(int(rng.integers(1, 16)))]
        adv = rng.normal(0, 1, len(steps))
        analytic = sum(a * actor.grad_log_prob(s.state, s.action)
                       for s, a in zip(steps, adv)).ravel()
        p = actor.params.ravel().copy()
        fd = np.zeros_like(p)
        for j in range(p.size):
            up, dn = p.copy(), p.copy()
            up[j] += h
            dn[j] -= h
            fd[j] = (_surrogate(actor.with_params(up), steps, adv)
                     - _surrogate(actor.with_params(dn), steps, adv)) / (2 * h)
        worst = max(worst, np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 30
    acceptance_report(2, ok, f"max relative error = {worst:.2e} over 20 pairs, {elapsed:.2f}s")
    assert ok


# -- 3 ---------------------------------------------------------------------------------

def test_criterion_3_critic_contraction(acceptance_report):
    rng = np.random.default_rng(3)
    worst_updates = 0
    for i in range(10):
        cmdp = random_cmdp(300 + i, 5, 3, 0.5, 0.9)
        pi = random_policy(rng, 5, 3)
        lam = float(rng.uniform(0, 5))
        exact = penalized_value_exact(cmdp, pi, lam).v_hat
        # one transition per (s, a, s'), weighted by its on-policy probability
        batch, w = [], []
        for s in range(5):
            for a in range(3):
                for s2 in range(5):
                    batch.append(Trajectory([Step(s, a, cmdp.reward[s, a, s2],
                                                  cmdp.penalty[s, a, s2], s2)]))
                    w.append(pi[s, a] * cmdp.transition[s, a, s2])
        critic = CriticTable.zeros(5)
        n = 0
        while np.max(np.abs(critic.v - exact)) >= 1e-3 and n < 10**5:
            critic = critic_td_update(batch, critic, lam, cmdp.discount, 0.1, w)
            n += 1
        worst_updates = max(worst_updates, n)
        if np.max(np.abs(critic.v - exact)) >= 1e-3:
            worst_updates = 10**5 + 1
            break
    ok = worst_updates <= 10**5
    acceptance_report(3, ok, f"sup-norm < 1e-3 reached within {worst_updates} updates "
                             "(worst of 10 CMDPs)")
    assert ok


# -- 4 ---------------------------------------------------------------------------------

def test_criterion_4_rover_feasibility(rover_runs, acceptance_report):
    env = rover_env()
    details, ok = [], True
    for alpha, slack in ((0.5, 0.02), (0.01, 0.01)):
        evald, exact = [], []
        for seed in SEEDS:
            run = rover_runs("rcpo", alpha, seed)
            assert run.steps <= ROVER_STEPS
            evald.append(run.final.eval_constraint_mean)
            exact.append(failure_probability_exact(env.cmdp, run.actor.probs_table()))
        med_eval, med_exact = float(np.median(evald)), float(np.median(exact))
        good = med_eval <= alpha + slack and med_exact <= alpha + slack
        ok &= good
        details.append(f"alpha={alpha}: median evaluated {med_eval:.4f}, "
                       f"median exact {med_exact:.4f} (limit {alpha + slack:.2f})")
    acceptance_report(4, ok, "; ".join(details))
    assert ok


# -- 5 ---------------------------------------------------------------------------------

def _first_satisfied(run, alpha):
    for row in run.metrics:
        if row.eval_constraint_mean <= alpha:
            return row.step
    return np.inf


def _reward_on_grid(run, grid):
    steps = np.array([r.step for r in run.metrics])
    rew = np.array([r.eval_reward_mean for r in run.metrics])
    return rew[np.searchsorted(steps, grid, side="right") - 1]


def test_criterion_5_rcpo_vs_lagrange_mc(rover_runs, acceptance_report):
    alpha = 0.5
    grid = np.linspace(0, ROVER_STEPS / 2, 41)
    wins, sat, curves = 0, [], {"rcpo": [], "mc": []}
    for seed in SEEDS:
        r, m = rover_runs("rcpo", alpha, seed), rover_runs("mc", alpha, seed)
        sr, sm = _first_satisfied(r, alpha), _first_satisfied(m, alpha)
        sat.append((sr, sm))
        wins += sr < sm
        curves["rcpo"].append(_reward_on_grid(r, grid))
        curves["mc"].append(_reward_on_grid(m, grid))
    spread = {k: float(np.mean(np.std(np.array(v), axis=0, ddof=1))) for k, v in curves.items()}
    ok = wins >= 4 and spread["rcpo"] < spread["mc"]
    acceptance_report(5, ok, f"RCPO satisfies first in {wins}/5 pairs {sat}; first-half reward "
                             f"std RCPO {spread['rcpo']:.4f} vs MC {spread['mc']:.4f}")
    assert ok


# -- 6 ---------------------------------------------------------------------------------

def torque_cfg(seed, lam_sched="const:1e-2"):
    return TrainConfig(
        total_steps=4 * 10**5,
        actor_schedule=parse_schedule("const:5e-2"),
        critic_schedule=parse_schedule("const:2e-1"),
        lambda_schedule=None if lam_sched is None else parse_schedule(lam_sched),
        gae_tau=0.95,
        seed=seed,
        eval_every=1000,
        eval_episodes=20000,
        eval_mode="online",
    )


def test_criterion_6_torque_toy(acceptance_report):
    t0 = time.perf_counter()
    tcfg = TorqueToyConfig(levels=(0.0, 1.0), alpha=0.25)
    env = torque_toy_env(tcfg)
    oracle = solve_cmdp_enumeration(torque_toy_build(tcfg), env.constraint)
    best = oracle.best_feasible_value
    torques, rewards = [], []
    for seed in SEEDS:
        run = rcpo_train(env, torque_cfg(seed))
        torques.append(run.final.eval_constraint_mean)
        rewards.append(run.final.eval_reward_mean)
    free = reward_shaping_train(env, 0.0, torque_cfg(0, None)).final
    heavy = reward_shaping_train(env, 100.0, torque_cfg(0, None)).final
    elapsed = time.perf_counter() - t0
    rcpo_reward = float(np.median(rewards))
    ok = (all(abs(t - 0.25) <= 0.03 for t in torques)
          and all(abs(r - best) <= 0.1 * abs(best) for r in rewards)
          and free.eval_constraint_mean > 0.25
          and heavy.eval_constraint_mean <= 0.25 / 5
          and heavy.eval_reward_mean < rcpo_reward
          and elapsed < 300)
    acceptance_report(6, ok, f"RCPO torque {np.round(torques, 4).tolist()} reward "
                             f"{np.round(rewards, 4).tolist()} (oracle {best:.4f}); "
                             f"shaping lam=0 torque {free.eval_constraint_mean:.4f}; "
                             f"lam=100 torque {heavy.eval_constraint_mean:.4f} reward "
                             f"{heavy.eval_reward_mean:.4f}; {elapsed:.0f}s")
    assert ok


# -- 7 ---------------------------------------------------------------------------------

def vertex_threshold(cmdp):
    """J_C of the widest interior vertex of the Lagrangian sweep, or None.

    Placing alpha there makes a deterministic policy the constrained optimum
    with an interior multiplier.
    """
    spec = ConstraintSpec.discounted(1e9, cmdp.discount)
    verts, prev = [], None
    for i, lam in enumerate(LAMBDA_GRID):
        pi = solve_mdp(cmdp, float(lam))
        key = tuple(pi.argmax(axis=1))
        if key != prev:
            verts.append([i, i, policy_values(cmdp, pi, spec)[1]])
            prev = key
        else:
            verts[-1][1] = i
    inner = [v for v in verts[1:-1] if v[1] - v[0] >= 4]
    if not inner:
        return None
    return max(inner, key=lambda v: (v[1] - v[0], -v[0]))[2]


def test_criterion_7_feasible_fixed_points(acceptance_report):
    instances, seed = [], 0
    while len(instances) < 10:
        cmdp = random_cmdp(seed, 5, 3, 0.4, 0.9)
        alpha = vertex_threshold(cmdp)
        if alpha is not None:
            instances.append((seed, cmdp, alpha))
        seed += 1
    good, dominated, gaps = 0, 0, []
    for seed, cmdp, alpha in instances:
        spec = ConstraintSpec.discounted(alpha, 0.9)
        oracle = solve_cmdp_enumeration(cmdp, spec)
        assert oracle.feasible
        bound = max(oracle.best_feasible_value, oracle.mixture.value)
        env = Environment(cmdp, spec, max_episode_steps=100)
        cfg = TrainConfig(total_steps=10**6, actor_schedule=parse_schedule("const:1e-1"),
                          critic_schedule=parse_schedule("const:3e-1"),
                          lambda_schedule=parse_schedule("const:5e-3"),
                          seed=0, eval_every=10**9, eval_episodes=10)
        run = rcpo_train(env, cfg)
        j_r, j_c = policy_values(cmdp, run.actor.probs_table(), spec)
        gaps.append(round(j_c - alpha, 5))
        good += j_c <= alpha + 1e-3
        dominated += j_c <= alpha and j_r > bound + 1e-6
    ok = good >= 9 and dominated == 0
    acceptance_report(7, ok, f"{good}/10 instances with exact J_C <= alpha + 1e-3 "
                             f"(J_C - alpha: {gaps}); oracle dominated {dominated} times")
    assert ok


# -- 8 ---------------------------------------------------------------------------------

DETERMINISM_CONFIGS = {
    "rover": """
run.seeds = 4
env.kind = rover
algo.name = rcpo
algo.total_steps = 30000
algo.lambda_init = 0.6
sched.actor = const:5e-2
sched.critic = const:2e-1
sched.lambda = const:2.5e-5
eval.every = 200
eval.episodes = 50
""",
    "random": """
run.seeds = 1
env.kind = random
env.states = 6
env.actions = 3
constraint.alpha = 2.0
algo.name = lagrange_mc
algo.total_steps = 20000
sched.actor = const:5e-2
sched.critic = const:2e-1
sched.lambda = const:1e-3
eval.every = 20
eval.episodes = 20
""",
    "torque": """
run.seeds = 2
env.kind = torque
algo.name = shaping
algo.lambda = 0.5
algo.total_steps = 20000
algo.gae_tau = 0.95
sched.actor = const:5e-2
sched.critic = const:2e-1
eval.every = 100
eval.mode = online
""",
}


def test_criterion_8_determinism(tmp_path, acceptance_report):
    same = []
    for name, text in DETERMINISM_CONFIGS.items():
        cfg = parse_config(text)
        a = run_experiment(cfg, str(tmp_path / f"{name}_a"))[0]
        b = run_experiment(cfg, str(tmp_path / f"{name}_b"))[0]
        with open(a.metrics_csv, "rb") as fa, open(b.metrics_csv, "rb") as fb:
            same.append(fa.read() == fb.read())
    ok = all(same)
    acceptance_report(8, ok, f"byte-identical metrics CSV on rerun: "
                             f"{dict(zip(DETERMINISM_CONFIGS, same))}")
    assert ok


# -- 9 ---------------------------------------------------------------------------------

PL, CONST, DECAY = StepSchedule.power_law, StepSchedule.constant, StepSchedule.constant_with_decay
V, I, H = Verdict.VALID, Verdict.INVALID, Verdict.HEURISTIC

SCHEDULE_TABLE = [
    (PL(1, 1.0), PL(1, 0.6), V),
    (PL(1, 1.0), PL(1, 0.75), V),
    (PL(0.1, 0.9), PL(1, 0.55), V),
    (PL(1, 0.8), PL(1, 0.7), V),
    (PL(1, 0.51), PL(1, 0.505), V),
    (PL(2, 1.0), PL(0.5, 0.99), V),
    (PL(1, 0.6), PL(1, 1.0), I),        # reversed
    (PL(1, 0.7), PL(1, 0.7), I),        # equal exponents
    (PL(1, 0.4), PL(1, 0.3), I),        # both too slow to square-sum
    (PL(1, 1.2), PL(1, 0.8), I),        # slow sums to a finite total
    (PL(1, 0.5), PL(1, 0.45), I),       # boundary 0.5 excluded
    (PL(1, 1.0), PL(1, 0.5), I),        # fast at the boundary
    (PL(1, 2.0), PL(1, 1.5), I),
    (PL(1, 1.0), PL(1, 0.2), I),
    (CONST(2.5e-5), CONST(1e-3), H),    # rover-style constant rates
    (CONST(5e-7), CONST(5e-5), H),      # robotics-style constant rates
    (DECAY(5e-7, 1 - 1e-9), DECAY(1e-4, 0.999999), H),
    (CONST(1e-3), PL(1, 0.6), H),
    (PL(1, 1.0), CONST(1e-2), H),
    (CONST(1e-3), PL(1, 0.3), I),       # invalid exponent beats the heuristic flag
]


def test_criterion_9_schedule_validation(acceptance_report):
    assert len(SCHEDULE_TABLE) == 20
    wrong = []
    for slow, fast, expected in SCHEDULE_TABLE:
        v = validate_timescales(slow, fast)
        power_pair = slow.family is fast.family is PL(1, 1).family
        accept_rule = (power_pair and 0.5 < slow.p <= 1 and 0.5 < fast.p <= 1
                       and slow.p > fast.p)
        if v.verdict is not expected or v.valid != accept_rule:
            wrong.append((str(slow), str(fast), v.verdict.value))
        if expected is H and not v.reason.startswith("heuristic"):
            wrong.append((str(slow), str(fast), "unflagged"))
    ok = not wrong
    acceptance_report(9, ok, f"{20 - len(wrong)}/20 pairs classified as expected"
                             + (f"; mismatches {wrong}" if wrong else ""))
    assert ok
