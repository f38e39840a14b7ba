import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import chain_cmdp, random_policy, two_state_cmdp
from rcpo.agents import (
    CriticTable,
    DenseSoftmaxPolicy,
    LagrangeState,
    SoftmaxPolicy,
    TrainConfig,
    TrainConfigError,
    critic_td_update,
    gae_advantages,
    lagrange_mc_train,
    lambda_update,
    policy_gradient_step,
    rcpo_train,
    reward_shaping_train,
)
from rcpo.cmdp import ConstraintSpec, Step, TabularCMDP, Trajectory, penalized_value_exact
from rcpo.envs import Environment, random_cmdp
from rcpo.schedules import ProjectionBox, StepSchedule

const = StepSchedule.constant


def expected_td_batch(cmdp, pi):
    """Every (s, a, s') transition once, weighted by pi(a|s) P(s'|s, a)."""
    steps, w = [], []
    P, R, C = cmdp.transition, cmdp.reward, cmdp.penalty
    term = cmdp.terminal_mask
    for s in range(cmdp.n_states):
        for a in range(cmdp.n_actions):
            for s2 in np.flatnonzero(P[s, a] > 0):
                steps.append(Step(s, a, R[s, a, s2], C[s, a, s2], int(s2), bool(term[s2])))
                w.append(pi[s, a] * P[s, a, s2])
    return [Trajectory([x]) for x in steps], np.array(w)


def random_batch(rng, S, A, n_traj=3, length=4):
    out = []
    for _ in range(n_traj):
        out.append(Trajectory(Step(int(rng.integers(S)), int(rng.integers(A)), 0.0, 0.0,
                                   int(rng.integers(S)), False) for _ in range(length)))
    return out


def surrogate(actor, batch, adv):
    steps = [x for tr in batch for x in tr]
    return sum(actor.log_prob(x.state, x.action) * a for x, a in zip(steps, adv))


def fd_gradient(actor, batch, adv, h=1e-5):
    p = actor.params.astype(float).ravel()
    g = np.zeros_like(p)
    for i in range(p.size):
        up, dn = p.copy(), p.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (surrogate(actor.with_params(up), batch, adv)
                - surrogate(actor.with_params(dn), batch, adv)) / (2 * h)
    return g


def analytic_gradient(actor, batch, adv):
    steps = [x for tr in batch for x in tr]
    return sum(a * actor.grad_log_prob(x.state, x.action) for x, a in zip(steps, adv)).ravel()


def tiny_cfg(**kw):
    base = dict(total_steps=3000, actor_schedule=const(5e-2), critic_schedule=const(2e-1),
                lambda_schedule=const(1e-3), eval_every=20, eval_episodes=10)
    base.update(kw)
    return TrainConfig(**base)


# -- policies ---------------------------------------------------------------

@given(st.integers(0, 2**31 - 1))
def test_softmax_invariants(seed):
    rng = np.random.default_rng(seed)
    actor = SoftmaxPolicy(rng.normal(0, 5, (4, 3)))
    pi = actor.probs_table()
    assert np.all(pi > 0)
    assert np.allclose(pi.sum(axis=1), 1.0, atol=1e-12)
    for s in range(4):
        mean = sum(pi[s, a] * actor.grad_log_prob(s, a) for a in range(3))
        assert np.max(np.abs(mean)) < 1e-8


def test_dense_invariants(rng):
    actor = DenseSoftmaxPolicy.init(5, 4, 3, rng, scale=1.0)
    actor = actor.with_params(actor.params + rng.normal(0, 0.5, actor.params.size))
    pi = actor.probs_table()
    assert np.allclose(pi.sum(axis=1), 1.0, atol=1e-12)
    for s in range(5):
        np.testing.assert_allclose(actor.action_probs(s), pi[s], atol=1e-14)
        mean = sum(pi[s, a] * actor.grad_log_prob(s, a) for a in range(3))
        assert np.max(np.abs(mean)) < 1e-8


def test_extreme_preferences_stay_positive():
    actor = SoftmaxPolicy(np.array([[50.0, -50.0]]))
    p = actor.action_probs(0)
    assert p[1] > 0 and abs(p.sum() - 1.0) < 1e-12


def test_sample_matches_probabilities(rng):
    actor = SoftmaxPolicy(np.array([[0.0, 1.0, 2.0]]))
    draws = np.array([actor.sample(0, u) for u in rng.random(20000)])
    freq = np.bincount(draws, minlength=3) / len(draws)
    np.testing.assert_allclose(freq, actor.action_probs(0), atol=0.015)


def test_in_place_helpers_match_gradient(rng):
    actor = SoftmaxPolicy(rng.normal(size=(3, 2)))
    buf = actor.zeros_like_params()
    actor.accumulate(buf, 1, 0, 0.7)
    np.testing.assert_allclose(buf, 0.7 * actor.grad_log_prob(1, 0))
    before = actor.theta.copy()
    actor.apply(buf, 0.5, None)
    np.testing.assert_allclose(actor.theta, before + 0.5 * buf)
    # cached probabilities are refreshed after apply
    np.testing.assert_allclose(actor._row(1)[0], actor.action_probs(1))


@pytest.mark.parametrize("kind", ["tabular", "dense"])
def test_gradient_finite_difference(kind, rng):
    for _ in range(5):
        S, A = int(rng.integers(2, 5)), int(rng.integers(2, 4))
        if kind == "tabular":
            actor = SoftmaxPolicy(rng.normal(0, 1, (S, A)))
        else:
            actor = DenseSoftmaxPolicy(rng.normal(0, 0.5, S * 3 + 3 + 3 * A + A), S, 3, A)
        batch = random_batch(rng, S, A)
        adv = rng.normal(size=sum(len(t) for t in batch))
        g, fd = analytic_gradient(actor, batch, adv), fd_gradient(actor, batch, adv)
        assert np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12) < 1e-4


# -- single-step updates --------------------------------------------------------

def test_lambda_update_examples():
    ls = LagrangeState(0.6, schedule=const(2.5e-5))
    out = lambda_update(ls, 0.3, 0.01)
    # 0.6 + 2.5e-5 * (0.3 - 0.01)
    assert out.lam == pytest.approx(0.60000725, abs=1e-12)
    assert out.update_count == 1
    zero = LagrangeState(0.0, schedule=const(1.0))
    assert lambda_update(zero, 0.0, 0.5).lam == 0.0
    for jc in np.linspace(0.0, 0.5, 50):
        zero = lambda_update(zero, jc, 0.5)
        assert zero.lam == 0.0


def test_lambda_update_caps_and_errors():
    ls = LagrangeState(9.0, lam_max=10.0, schedule=const(1.0))
    assert lambda_update(ls, 5.0, 0.0).lam == 10.0
    assert lambda_update(LagrangeState(0.3), 5.0, 0.0).lam == 0.3
    with pytest.raises(ValueError):
        lambda_update(ls, math.nan, 0.0)
    with pytest.raises(ValueError):
        LagrangeState(2.0, lam_max=1.0)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0, 1), st.floats(0.01, 5))
def test_lambda_stays_in_box(jcs, alpha, lam_max):
    ls = LagrangeState(0.0, lam_max, const(0.7))
    for jc in jcs:
        ls = lambda_update(ls, jc, alpha)
        assert 0.0 <= ls.lam <= lam_max


def test_policy_gradient_examples(rng):
    batch = [Trajectory([Step(0, 0, 1.0, 0.0, 0), Step(0, 1, 0.0, 0.0, 0)])]
    actor = SoftmaxPolicy(np.zeros((1, 2)))
    same = policy_gradient_step(batch, actor, [0.0, 0.0], 0.1)
    np.testing.assert_array_equal(same.params, actor.params)
    up = policy_gradient_step(batch[:1], actor, [1.0, 0.0], 0.1)
    assert up.action_probs(0)[0] > actor.action_probs(0)[0]
    boxed = policy_gradient_step(batch, actor, [100.0, 0.0], 1.0, ProjectionBox.uniform((1, 2), 1.0))
    assert np.max(np.abs(boxed.params)) <= 1.0
    with pytest.raises(ValueError):
        policy_gradient_step(batch, actor, [1.0], 0.1)
    with pytest.raises(ValueError):
        policy_gradient_step(batch, actor, [1.0, 0.0], 0.0)


def test_policy_gradient_sums_over_batch(rng):
    actor = SoftmaxPolicy(rng.normal(size=(3, 2)))
    batch = random_batch(rng, 3, 2)
    adv = rng.normal(size=12)
    out = policy_gradient_step(batch, actor, adv, 0.01)
    np.testing.assert_allclose(out.params.ravel(),
                               actor.params.ravel() + 0.01 * analytic_gradient(actor, batch, adv))


def test_critic_terminal_target():
    batch = [Trajectory([Step(0, 0, 0.0, 1.0, 1, True)])]
    out = critic_td_update(batch, CriticTable.zeros(2), 0.6, 0.99, 0.5)
    # v - eta * (-2 * (y - v)) with y = -0.6
    assert out.v[0] == pytest.approx(2 * 0.5 * -0.6)
    assert out.v[1] == 0.0


def test_critic_lambda_zero_ignores_penalty(rng):
    steps = [Step(0, 0, 0.3, 5.0, 1), Step(1, 1, -0.2, 3.0, 0)]
    no_pen = [s._replace(penalty=0.0) for s in steps]
    critic = CriticTable(rng.normal(size=2))
    a = critic_td_update([Trajectory(steps)], critic, 0.0, 0.9, 0.1)
    b = critic_td_update([Trajectory(no_pen)], critic, 0.0, 0.9, 0.1)
    np.testing.assert_array_equal(a.v, b.v)
    with pytest.raises(ValueError):
        critic_td_update([Trajectory(steps)], critic, -1.0, 0.9, 0.1)


def test_critic_converges_to_exact(rng):
    for seed in range(3):
        cmdp = random_cmdp(seed, 5, 2, 0.5, 0.9)
        pi = random_policy(rng, 5, 2)
        lam = float(rng.uniform(0, 3))
        batch, w = expected_td_batch(cmdp, pi)
        critic = CriticTable.zeros(5)
        for _ in range(400):
            critic = critic_td_update(batch, critic, lam, cmdp.discount, 0.25, w)
        exact = penalized_value_exact(cmdp, pi, lam).v_hat
        assert np.max(np.abs(critic.v - exact)) < 1e-3


def test_critic_rejects_non_finite():
    with pytest.raises(ValueError):
        CriticTable([0.0, math.inf])


def test_gae_examples(rng):
    critic = CriticTable(rng.normal(size=3))
    lam, gamma = 0.4, 0.9
    traj = Trajectory([Step(0, 0, 1.0, 0.5, 1), Step(1, 1, 0.2, 0.0, 2), Step(2, 0, -0.3, 1.0, 0, True)])
    v = critic.v
    rhat = [1.0 - 0.2, 0.2, -0.3 - 0.4]
    nxt = [v[1], v[2], 0.0]
    deltas = [rhat[t] + gamma * nxt[t] - v[traj[t].state] for t in range(3)]
    np.testing.assert_allclose(gae_advantages(traj, critic, lam, gamma, 0.0), deltas, atol=1e-14)
    mc = [sum(gamma ** (j - t) * rhat[j] for j in range(t, 3)) - v[traj[t].state] for t in range(3)]
    np.testing.assert_allclose(gae_advantages(traj, critic, lam, gamma, 1.0), mc, atol=1e-12)
    one = Trajectory([Step(1, 0, 0.5, 1.0, 2)])
    for tau in (0.0, 0.5, 1.0):
        assert gae_advantages(one, critic, lam, gamma, tau)[0] == pytest.approx(
            0.5 - lam + gamma * v[2] - v[1])
    with pytest.raises(ValueError):
        gae_advantages(one, critic, lam, gamma, 1.5)


def test_gae_truncated_bootstraps(rng):
    critic = CriticTable(rng.normal(size=2))
    traj = Trajectory([Step(0, 0, 1.0, 0.0, 1), Step(1, 0, 1.0, 0.0, 0)])
    adv = gae_advantages(traj, critic, 0.0, 0.5, 1.0)
    v = critic.v
    assert adv[0] == pytest.approx(1.0 + 0.5 * 1.0 + 0.25 * v[0] - v[0])


# -- training loops -------------------------------------------------------------

def chain_env(alpha=0.5, penalty=True, cap=20):
    cmdp = chain_cmdp(4, 0.9)
    if not penalty:
        cmdp = cmdp.with_penalty(np.zeros_like(cmdp.penalty))
    return Environment(cmdp, ConstraintSpec.discounted(alpha, 0.9), max_episode_steps=cap)


def test_config_validation():
    with pytest.raises(TrainConfigError):
        tiny_cfg(total_steps=0).validate()
    with pytest.raises(TrainConfigError):
        tiny_cfg(gamma=1.0).validate()
    with pytest.raises(TrainConfigError):
        tiny_cfg(lambda_schedule=const(1.0)).validate()
    with pytest.raises(TrainConfigError):
        tiny_cfg(critic_schedule=const(1e-2)).validate()
    with pytest.raises(TrainConfigError):
        tiny_cfg(eval_mode="sometimes").validate()
    tiny_cfg(critic_schedule=const(1e-2)).validate(uses_critic=False)


def test_zero_penalty_keeps_lambda_zero():
    env = chain_env(alpha=0.0, penalty=False)
    run = rcpo_train(env, tiny_cfg())
    assert np.all(run.lambda_trace == 0.0)
    plain = rcpo_train(env, tiny_cfg(lambda_schedule=None))
    np.testing.assert_array_equal(run.actor.params, plain.actor.params)
    np.testing.assert_array_equal(run.critic.v, plain.critic.v)


def test_slack_constraint_keeps_lambda_zero():
    # every discounted penalty sum on the chain stays below 1 / (1 - 0.9)
    env = chain_env(alpha=10.0)
    run = rcpo_train(env, tiny_cfg(lambda_schedule=const(1e-2)))
    assert run.episodes > 0 and np.all(run.lambda_trace == 0.0)


def test_lambda_rises_when_violated():
    env = chain_env(alpha=0.0)
    run = rcpo_train(env, tiny_cfg(lambda_schedule=const(1e-2)))
    assert run.lagrange.lam > 0
    assert np.all(np.diff(run.lambda_trace) >= 0)


def test_shaping_equals_frozen_rcpo():
    env = chain_env(alpha=0.2)
    cfg = tiny_cfg()
    shaped = reward_shaping_train(env, 1.5, cfg)
    frozen = rcpo_train(env, replace(cfg, lambda_schedule=None, lambda_init=1.5))
    np.testing.assert_array_equal(shaped.actor.params, frozen.actor.params)
    assert shaped.metrics == frozen.metrics
    assert np.all(shaped.lambda_trace == 1.5)
    with pytest.raises(TrainConfigError):
        reward_shaping_train(env, -1.0, cfg)


def one_step_env(alpha, c=0.2):
    """Every episode is a single step with penalty ``c``, whatever the action."""
    P = np.zeros((2, 2, 2))
    P[:, :, 1] = 1.0
    C = np.array([[c, c], [0.0, 0.0]])
    cmdp = TabularCMDP(P, np.zeros((2, 2)), C, np.array([1.0, 0.0]), 0.9, frozenset({1}))
    return Environment(cmdp, ConstraintSpec.discounted(alpha, 0.9))


@pytest.mark.parametrize("train", [rcpo_train, lagrange_mc_train])
def test_lambda_follows_clamped_recursion(train):
    # the episode constraint is a constant 0.2 whatever theta does
    env = one_step_env(alpha=0.5)
    run = train(env, tiny_cfg(total_steps=500, lambda_init=1.0, lambda_schedule=const(1e-2)))
    lam, expect = 1.0, []
    for _ in range(500):
        lam = max(0.0, lam + 1e-2 * (0.2 - 0.5))
        expect.append(lam)
    np.testing.assert_allclose(run.lambda_trace, expect, atol=1e-12)
    assert run.lagrange.lam == 0.0


def test_lagrange_mc_zero_penalty_matches_reward_pg():
    env = chain_env(alpha=0.0, penalty=False)
    a = lagrange_mc_train(env, tiny_cfg())
    b = lagrange_mc_train(env, tiny_cfg(lambda_schedule=None))
    assert np.all(a.lambda_trace == 0.0)
    np.testing.assert_array_equal(a.actor.params, b.actor.params)


@pytest.mark.parametrize("train", [rcpo_train, lagrange_mc_train])
def test_determinism(train):
    env = Environment(two_state_cmdp(), ConstraintSpec.discounted(2.0, 0.9), max_episode_steps=15)
    a, b = train(env, tiny_cfg(seed=3)), train(env, tiny_cfg(seed=3))
    assert a.metrics == b.metrics
    np.testing.assert_array_equal(a.lambda_trace, b.lambda_trace)
    c = train(env, tiny_cfg(seed=4))
    assert c.metrics != a.metrics


def test_dense_actor_runs():
    env = chain_env(alpha=0.5)
    run = rcpo_train(env, tiny_cfg(actor="dense", hidden=4, total_steps=500))
    assert run.steps == 500 and np.all(np.isfinite(run.actor.params))
    assert np.all(np.abs(run.actor.params) <= run.config.theta_bound)


def test_online_metrics_and_final_row():
    env = chain_env(alpha=0.5)
    run = rcpo_train(env, tiny_cfg(eval_mode="online", total_steps=1234))
    assert run.final.step == 1234
    steps = [m.step for m in run.metrics]
    assert steps == sorted(set(steps))
