import math

import numpy as np
import pytest

from edgesched.env import BATCH_SIZES, CONCURRENCY, EdgeEnv
from edgesched.sac import (N_ACTIONS, Action, Batch, ReplayBuffer, SacAgent, SacConfig,
                           SacScheduler, Transition, decode_action, encode_action, policy_loss,
                           q_loss, select_action, soft_value, temperature_loss, train_episode)
from helpers import toy_env_config


def test_action_grid_bijection():
    seen = set()
    for b in BATCH_SIZES:
        for c in CONCURRENCY:
            i = encode_action(b, c)
            assert decode_action(i) == (b, c)
            seen.add(i)
    assert seen == set(range(N_ACTIONS)) and N_ACTIONS == 64
    assert Action.from_pair(16, 3).flat_index == 4 * 8 + 2
    with pytest.raises(ValueError):
        encode_action(3, 1)
    with pytest.raises(ValueError):
        Action.from_index(64)


def test_soft_value_examples():
    assert soft_value([1.0, 2.0], [1.0, 0.0], 0.5) == pytest.approx(1.0)
    v = soft_value([0.0, 0.0], [0.5, 0.5], 1.0)
    assert v == pytest.approx(math.log(2))
    with pytest.raises(ValueError):
        soft_value([0.0], [0.5, 0.5], 1.0)


def test_transition_rejects_nan():
    with pytest.raises(ValueError):
        Transition(np.zeros(2), 0, float("nan"), np.zeros(2), False)


def test_replay_fifo_and_sampling():
    buf = ReplayBuffer(2, capacity=3, initial=1)
    for i in range(5):
        buf.add(np.full(2, i), i, float(i), np.zeros(2), False)
    assert len(buf) == 3 and buf.inserted == 5
    assert [t.a for t in buf.transitions()] == [2, 3, 4]
    mb = buf.sample(np.random.default_rng(0), 10)
    assert set(mb.a.tolist()) <= {2, 3, 4}
    with pytest.raises(ValueError):
        ReplayBuffer(2).sample(np.random.default_rng(0), 1)
    with pytest.raises(ValueError):
        buf.add(np.zeros(2), 99, 0.0, np.zeros(2), False)


def _agent(**kw):
    cfg = SacConfig(hidden=(8,), batch_size=4, **kw)
    return SacAgent(3, 4, cfg, seed=1)


def _batch(n=6, seed=0):
    rng = np.random.default_rng(seed)
    return Batch(rng.normal(size=(n, 3)), rng.integers(0, 4, n), rng.normal(size=n),
                 rng.normal(size=(n, 3)), (rng.random(n) < 0.3).astype(float))


def test_losses_reject_empty():
    a = _agent()
    for fn in (q_loss, policy_loss, temperature_loss):
        with pytest.raises(ValueError):
            fn(a, [])


def test_terminal_zeroes_bootstrap():
    a = _agent(gamma=0.9)
    b = _batch()
    b = b._replace(done=np.ones(len(b.a)))
    from edgesched.sac import q_targets
    assert np.allclose(q_targets(a, b), b.r)


def test_temperature_direction():
    a = _agent()
    a.policy.params[:] = 0.0
    b = _batch()
    val, grad = temperature_loss(a, b)
    # a uniform policy has entropy above the target, so alpha falls
    assert grad > 0
    before = a.log_alpha
    a.step_temperature(grad)
    assert a.log_alpha < before


def test_update_waits_for_minibatch_and_changes_params():
    a = _agent()
    rng = np.random.default_rng(0)
    assert a.update(rng) is None
    for t in range(4):
        a.replay.add(np.ones(3) * t, t % 4, 1.0, np.zeros(3), False)
    before = a.q1.params.copy(), a.q1_target.params.copy()
    stats = a.update(rng)
    assert stats is not None and a.updates == 1
    assert not np.array_equal(a.q1.params, before[0])
    assert np.allclose(a.q1_target.params,
                       0.995 * before[1] + 0.005 * a.q1.params)


def test_select_action_modes():
    a = _agent()
    s = np.zeros(3)
    greedy = select_action(a, s, "eval")
    assert greedy.flat_index == int(np.argmax(a.policy(s)))
    rng = np.random.default_rng(0)
    counts = np.bincount([select_action(a, s, "train", rng).flat_index for _ in range(4000)],
                         minlength=4)
    assert np.allclose(counts / 4000, a.probs(s), atol=0.03)
    with pytest.raises(ValueError):
        select_action(a, s, "explore")


def test_agent_checkpoint_roundtrip():
    a = _agent()
    for t in range(4):
        a.replay.add(np.ones(3), t, 1.0, np.zeros(3), False)
    a.update(np.random.default_rng(0))
    b = SacAgent.from_dict(a.to_dict())
    s = np.linspace(0, 1, 3)
    assert np.array_equal(a.policy(s), b.policy(s)) and a.log_alpha == b.log_alpha


def test_scheduler_trains_deterministically():
    cfg = toy_env_config(episode_slots=32)
    sac = SacConfig(hidden=(16,), batch_size=8)

    def run():
        env = EdgeEnv(cfg)
        sched = SacScheduler(["toy"], env.state_dim, sac, seed=5)
        stats = train_episode(sched, env, steps=20)
        return sched, stats

    s1, st1 = run()
    s2, st2 = run()
    assert st1.rewards == st2.rewards and len(st1.log) == 20
    assert s1.dumps() == s2.dumps()
    assert s1.steps == 20 and s1.episodes == 1 and s1.mode == "eval"
    assert {"slot", "reward", "q_loss", "pi_loss", "alpha", "utility",
            "slo_violation_flag"} <= set(st1.log[-1])
    restored = SacScheduler.loads(s1.dumps())
    s = np.linspace(0, 1, s1.state_dim)
    assert np.array_equal(restored.agents["toy"].policy(s), s1.agents["toy"].policy(s))
    assert restored.steps == 20


def test_scheduler_env_mismatch():
    env = EdgeEnv(toy_env_config())
    sched = SacScheduler(["toy"], env.state_dim + 1)
    with pytest.raises(ValueError, match="dimension mismatch"):
        sched.check_env(env)
    with pytest.raises(ValueError):
        SacScheduler.from_dict({"format": "other"})


def test_eval_tie_break_and_unique_max():
    a = _agent()
    a.policy.params[:] = 0.0
    assert select_action(a, np.zeros(3), "eval").flat_index == 0
    a.policy.biases[-1][2] = 1.0
    assert select_action(a, np.zeros(3), "eval").flat_index == 2


def test_train_sampling_matches_policy_over_many_draws():
    agent = SacAgent(3, N_ACTIONS, SacConfig(hidden=(8,)), seed=4)
    s = np.linspace(-1, 1, 3)
    rng = np.random.default_rng(11)
    draws = [select_action(agent, s, "train", rng).flat_index for _ in range(100_000)]
    freq = np.bincount(draws, minlength=N_ACTIONS) / len(draws)
    assert np.max(np.abs(freq - agent.probs(s))) < 0.01


def test_q_loss_zero_at_fixed_point():
    a = _agent(gamma=0.0)
    s = np.zeros((1, 3))
    q = float(a.q1(s[0])[1])
    a.q2.params[:] = a.q1.params
    b = Batch(s, np.array([1]), np.array([q]), s, np.array([0.0]))
    loss, (g1, g2) = q_loss(a, b)
    assert loss == pytest.approx(0.0, abs=1e-20)
    assert not g1.any() and not g2.any()


def test_policy_gradient_vanishes_at_boltzmann_optimum():
    rng = np.random.default_rng(2)
    for trial in range(5):
        a = SacAgent(3, 4, SacConfig(hidden=(), init_alpha=0.3 + trial * 0.2), seed=trial)
        b = _batch(8, seed=trial)
        q_min = np.minimum(a.q1(b.s), a.q2(b.s))
        # a linear policy whose logits are q_min / alpha
        a.policy.params[:] = 0.0
        w = np.linalg.lstsq(np.hstack([b.s, np.ones((8, 1))]), q_min / a.alpha, rcond=None)[0]
        if not np.allclose(np.hstack([b.s, np.ones((8, 1))]) @ w, q_min / a.alpha):
            continue
        a.policy.weights[0][...] = w[:3]
        a.policy.biases[0][...] = w[3]
        _, grad = policy_loss(a, b)
        assert np.max(np.abs(grad)) < 1e-8
    q1 = SacAgent(3, 4, SacConfig(hidden=()), seed=0)
    q1.q1.params[:] = 0.0
    q1.q2.params[:] = 0.0
    q1.policy.params[:] = 0.0
    _, grad = policy_loss(q1, _batch())
    assert np.max(np.abs(grad)) < 1e-12
    assert rng is not None


def test_policy_loss_falls_as_mass_moves_to_best_action():
    a = SacAgent(1, 3, SacConfig(hidden=(), init_alpha=1e-6), seed=0)
    for net in (a.q1, a.q2):
        net.params[:] = 0.0
        net.biases[0][...] = [0.0, 2.0, 1.0]
    b = Batch(np.zeros((1, 1)), np.zeros(1, dtype=np.int64), np.zeros(1), np.zeros((1, 1)),
              np.zeros(1))
    losses = []
    for push in (0.0, 1.0, 3.0, 6.0):
        a.policy.params[:] = 0.0
        a.policy.biases[0][1] = push
        losses.append(policy_loss(a, b)[0])
    assert all(x > y for x, y in zip(losses, losses[1:]))


def test_temperature_fixed_point_and_low_entropy_sign():
    a = SacAgent(3, 4, SacConfig(hidden=(), target_entropy_scale=1.0), seed=0)
    a.policy.params[:] = 0.0
    assert temperature_loss(a, _batch())[1] == pytest.approx(0.0, abs=1e-12)
    a.policy.biases[0][0] = 30.0
    _, grad = temperature_loss(a, _batch())
    before = a.log_alpha
    a.step_temperature(grad)
    assert grad < 0 and a.log_alpha > before and a.alpha > 0


def test_polyak_tau_one_copies_live_nets():
    a = _agent()
    a.q1.params[:] += 1.0
    a.polyak(1.0)
    assert np.array_equal(a.q1_target.params, a.q1.params)
    assert np.array_equal(a.q2_target.params, a.q2.params)


def test_single_step_below_batch_size_only_stores():
    env = EdgeEnv(toy_env_config())
    sched = SacScheduler(["toy"], env.state_dim, SacConfig(hidden=(8,), batch_size=4), seed=0)
    before = sched.agents["toy"].q1.params.copy()
    stats = train_episode(sched, env, steps=1)
    agent = sched.agents["toy"]
    assert len(agent.replay) == 1 and agent.updates == 0
    assert np.array_equal(agent.q1.params, before) and stats.log[0]["q_loss"] is None


def test_policy_stays_a_distribution_during_training():
    env = EdgeEnv(toy_env_config())
    sched = SacScheduler(["toy"], env.state_dim, SacConfig(hidden=(8,), batch_size=4), seed=0)
    train_episode(sched, env, steps=30)
    p = sched.agents["toy"].probs(env.observe())
    assert np.all(p >= 0) and p.sum() == pytest.approx(1.0)
