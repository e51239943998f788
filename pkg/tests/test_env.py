import math

import numpy as np
import pytest

from edgesched.env import OVERFLOW_PENALTY, EdgeEnv, derive_seed, reward
from edgesched.simcore import ExecutionOutcome
from edgesched.workload import Request
from helpers import default_env_config, toy_env_config


def test_derive_seed_stable_and_distinct():
    assert derive_seed(0, "a", 1) == derive_seed(0, "a", 1)
    assert len({derive_seed(0, "a", 1), derive_seed(0, "a", 2), derive_seed(0, "b", 1),
                derive_seed(1, "a", 1)}) == 4


def test_state_layout():
    env = EdgeEnv(default_env_config())
    assert env.state_dim == 6 * 10 + 3
    env.begin_slot()
    s = env.observe()
    assert s.shape == (env.state_dim,)
    assert np.all(s >= -1) and np.all(s <= 1)
    for k in range(6):
        assert s[k * 10 + k] == 1.0


def test_open_loop_slot_cycle():
    env = EdgeEnv(default_env_config())
    assert env.begin_slot()
    active = env.active_models()
    assert active and all(len(env.queues[m]) > 0 for m in active)
    for m in active:
        env.plan(m, 4, 1)
    results = env.execute()
    assert {r.model for r in results} == set(active)
    assert env.slot_index == 1
    for r in results:
        assert r.record.total == len(r.batch) and math.isfinite(r.reward)
        assert r.features is not None


def test_plan_errors():
    env = EdgeEnv(toy_env_config())
    with pytest.raises(RuntimeError):
        env.plan("toy", 1, 1)
    env.begin_slot()
    env.plan("toy", 1, 1)
    with pytest.raises(ValueError):
        env.plan("toy", 1, 1)


def test_saturated_batches_are_full():
    env = EdgeEnv(toy_env_config())
    env.begin_slot()
    batches = env.plan("toy", 8, 2)
    assert [len(b) for b in batches] == [8, 8]
    res, = env.execute()
    assert len(res.batch) == 16 and not res.outcome.overflowed


def test_reward_matches_utility_identity():
    env = EdgeEnv(toy_env_config())
    env.begin_slot()
    env.plan("toy", 4, 1)
    res, = env.execute()
    assert res.reward == pytest.approx(math.log(1000 * 4 / res.outcome.mean_latency_ms()))


def test_overflow_reward():
    env = EdgeEnv(toy_env_config())
    env.begin_slot()
    env.plan("toy", 128, 8)
    res, = env.execute()
    assert res.outcome.overflowed and res.reward == OVERFLOW_PENALTY
    assert res.record.violations == res.record.total


def test_reward_rejects_zero_slot():
    r = Request(0, "m", "text", (1,), 10.0, 0)
    out = ExecutionOutcome("m", 1, 1, (0,), per_request_latency={0: 5000})
    with pytest.raises(ValueError):
        reward(out, [r], 1, 1, 0.0)


def test_episode_reset_is_reproducible():
    env = EdgeEnv(default_env_config())
    env.reset(3)
    first = [r.arrival_us for r in env.trace]
    env.reset(4)
    assert [r.arrival_us for r in env.trace] != first
    env.reset(3)
    assert [r.arrival_us for r in env.trace] == first


def test_trace_exhaustion_is_terminal():
    cfg = default_env_config(horizon=0.5, episode_slots=10_000)
    env = EdgeEnv(cfg)
    n = 0
    while env.begin_slot():
        for m in env.active_models():
            env.plan(m, 128, 1)
        env.execute()
        n += 1
    assert env.done and env.exhausted
    assert env.peek_next()[1] is True
    assert env.counts["executed"] + env.counts["dropped"] == len(env.trace)
