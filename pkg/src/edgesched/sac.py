"""Discrete soft actor-critic scheduler.

One agent per model chooses a flat action over the (batch size, concurrency)
grid. Each agent owns twin soft Q-networks with slowly tracking target copies,
a policy network emitting logits, and a temperature stored as ``log_alpha``
that is tuned toward a target entropy.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from edgesched import _kernels
from edgesched.env import (BATCH_SIZES, CONCURRENCY, EdgeEnv, ModelResult, derive_seed,
                           reward)
from edgesched.nn import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, Mlp, log_softmax, softmax

__all__ = [
    "Action", "Transition", "ReplayBuffer", "SacConfig", "SacAgent", "SacScheduler",
    "soft_value", "q_loss", "policy_loss", "temperature_loss", "select_action",
    "train_episode", "reward", "N_ACTIONS",
]

N_ACTIONS = len(BATCH_SIZES) * len(CONCURRENCY)


# -- actions and transitions -----------------------------------------------------

@dataclass(frozen=True)
class Action:
    b: int
    m_c: int
    flat_index: int
    model: str | None = None

    @classmethod
    def from_index(cls, index: int, model: str | None = None) -> "Action":
        index = int(index)
        if not 0 <= index < N_ACTIONS:
            raise ValueError(f"action index {index} outside [0, {N_ACTIONS})")
        bi, ci = divmod(index, len(CONCURRENCY))
        return cls(BATCH_SIZES[bi], CONCURRENCY[ci], index, model)

    @classmethod
    def from_pair(cls, b: int, m_c: int, model: str | None = None) -> "Action":
        return cls(int(b), int(m_c), encode_action(b, m_c), model)


def encode_action(b: int, m_c: int) -> int:
    try:
        bi = BATCH_SIZES.index(int(b))
    except ValueError:
        raise ValueError(f"batch size {b} not in {BATCH_SIZES}") from None
    if int(m_c) not in CONCURRENCY:
        raise ValueError(f"concurrency {m_c} not in {CONCURRENCY}")
    return bi * len(CONCURRENCY) + (int(m_c) - CONCURRENCY[0])


def decode_action(index: int) -> tuple[int, int]:
    a = Action.from_index(index)
    return a.b, a.m_c


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool

    def __post_init__(self):
        if not math.isfinite(self.r):
            raise ValueError("transition reward must be finite")


class Batch(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray

    @property
    def size(self) -> int:
        return len(self.a)

    @classmethod
    def from_transitions(cls, items: Sequence[Transition]) -> "Batch":
        if not items:
            raise ValueError("empty minibatch")
        return cls(np.array([t.s for t in items], dtype=np.float64),
                   np.array([t.a for t in items], dtype=np.int64),
                   np.array([t.r for t in items], dtype=np.float64),
                   np.array([t.s_next for t in items], dtype=np.float64),
                   np.array([t.done for t in items], dtype=np.float64))


def _as_batch(minibatch) -> Batch:
    if isinstance(minibatch, Batch):
        if minibatch.size == 0:
            raise ValueError("empty minibatch")
        return minibatch
    return Batch.from_transitions(list(minibatch))


class ReplayBuffer:
    """FIFO ring of transitions stored column-wise.

    Storage starts small and doubles on demand up to ``capacity``; once full
    the oldest entry is overwritten.
    """

    def __init__(self, state_dim: int, capacity: int = 1_000_000, initial: int = 1024):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.state_dim = int(state_dim)
        self.capacity = int(capacity)
        self.size = 0
        self.inserted = 0
        self._pos = 0
        self._alloc(min(self.capacity, max(1, initial)))

    def _alloc(self, n: int) -> None:
        self.s = np.zeros((n, self.state_dim))
        self.s_next = np.zeros((n, self.state_dim))
        self.a = np.zeros(n, dtype=np.int64)
        self.r = np.zeros(n)
        self.done = np.zeros(n)

    def _grow(self) -> None:
        old = (self.s, self.s_next, self.a, self.r, self.done)
        n = len(self.a)
        self._alloc(min(self.capacity, 2 * n))
        for new, prev in zip((self.s, self.s_next, self.a, self.r, self.done), old):
            new[:n] = prev

    def __len__(self):
        return self.size

    def add(self, s, a: int, r: float, s_next, done: bool) -> None:
        if not math.isfinite(r):
            raise ValueError("transition reward must be finite")
        if not 0 <= int(a) < N_ACTIONS:
            raise ValueError(f"action index {a} out of range")
        if self._pos == len(self.a) and len(self.a) < self.capacity:
            self._grow()
        i = self._pos
        self.s[i] = s
        self.s_next[i] = s_next
        self.a[i] = a
        self.r[i] = r
        self.done[i] = float(done)
        self._pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.inserted += 1

    def push(self, t: Transition) -> None:
        self.add(t.s, t.a, t.r, t.s_next, t.done)

    def _order(self) -> np.ndarray:
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.size) + self._pos) % self.capacity

    def transitions(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        return [Transition(self.s[i].copy(), int(self.a[i]), float(self.r[i]),
                           self.s_next[i].copy(), bool(self.done[i])) for i in self._order()]

    def sample(self, rng: np.random.Generator, n: int) -> Batch:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=n)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.done[idx])


# -- agent -------------------------------------------------------------------------

@dataclass
class SacConfig:
    hidden: tuple = (128, 64)
    lr: float = 1e-3
    alpha_lr: float = 1e-3
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 512
    buffer_capacity: int = 1_000_000
    target_entropy_scale: float = 0.98
    init_alpha: float = 1.0
    autotune: bool = True

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("batch_size and buffer_capacity must be >= 1")
        if not (self.lr > 0 and self.alpha_lr > 0 and self.init_alpha > 0):
            raise ValueError("learning rates and init_alpha must be positive")


class UpdateStats(NamedTuple):
    q_loss: float
    pi_loss: float
    alpha_loss: float
    alpha: float


class SacAgent:
    def __init__(self, state_dim: int, n_actions: int = N_ACTIONS,
                 config: SacConfig | None = None, seed: int = 0):
        self.config = config or SacConfig()
        self.state_dim = int(state_dim)
        self.n_actions = int(n_actions)
        self.seed = int(seed)
        dims = [self.state_dim, *self.config.hidden, self.n_actions]
        self.q1 = Mlp(dims, seed=derive_seed(seed, "init", 1))
        self.q2 = Mlp(dims, seed=derive_seed(seed, "init", 2))
        self.policy = Mlp(dims, seed=derive_seed(seed, "init", 3))
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.log_alpha = math.log(self.config.init_alpha)
        self._alpha_m = np.zeros(1)
        self._alpha_v = np.zeros(1)
        self.alpha_step = 0
        self.target_entropy = self.config.target_entropy_scale * math.log(self.n_actions)
        self.replay = ReplayBuffer(self.state_dim, self.config.buffer_capacity)
        self.updates = 0

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    @property
    def gamma(self) -> float:
        return self.config.gamma

    def probs(self, s) -> np.ndarray:
        return softmax(self.policy(s))

    def update(self, rng: np.random.Generator) -> UpdateStats | None:
        """One gradient step on both critics, the policy and the temperature."""
        cfg = self.config
        if len(self.replay) < cfg.batch_size:
            return None
        batch = self.replay.sample(rng, cfg.batch_size)
        ql, (g1, g2) = q_loss(self, batch)
        self.q1.apply_gradient(g1, cfg.lr)
        self.q2.apply_gradient(g2, cfg.lr)
        pl, gp, logits = policy_loss(self, batch, return_logits=True)
        self.policy.apply_gradient(gp, cfg.lr)
        al = 0.0
        if cfg.autotune:
            al, ga = temperature_loss(self, batch, logits=logits)
            self.step_temperature(ga)
        self.q1_target.blend_from(self.q1, cfg.tau)
        self.q2_target.blend_from(self.q2, cfg.tau)
        self.updates += 1
        return UpdateStats(ql, pl, al, self.alpha)

    def step_temperature(self, grad: float) -> None:
        if not math.isfinite(grad):
            raise FloatingPointError("non-finite temperature gradient")
        self.alpha_step += 1
        param = np.array([self.log_alpha])
        _kernels.adam_update(param, np.array([float(grad)]), self._alpha_m, self._alpha_v,
                             float(self.config.alpha_lr), ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
                             1.0 - ADAM_BETA1 ** self.alpha_step,
                             1.0 - ADAM_BETA2 ** self.alpha_step)
        self.log_alpha = float(param[0])

    def polyak(self, tau: float | None = None) -> None:
        tau = self.config.tau if tau is None else tau
        self.q1_target.blend_from(self.q1, tau)
        self.q2_target.blend_from(self.q2, tau)

    # -- checkpointing ---------------------------------------------------------
    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["hidden"] = list(cfg["hidden"])
        return {
            "state_dim": self.state_dim,
            "n_actions": self.n_actions,
            "seed": self.seed,
            "config": cfg,
            "q1": self.q1.to_dict(), "q2": self.q2.to_dict(),
            "q1_target": self.q1_target.to_dict(), "q2_target": self.q2_target.to_dict(),
            "policy": self.policy.to_dict(),
            "log_alpha": self.log_alpha,
            "alpha_adam": {"m": float(self._alpha_m[0]), "v": float(self._alpha_v[0]),
                           "step": self.alpha_step},
            "updates": self.updates,
            "replay": {"size": self.replay.size, "inserted": self.replay.inserted,
                       "capacity": self.replay.capacity},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SacAgent":
        agent = cls(d["state_dim"], d["n_actions"], SacConfig(**d["config"]), seed=d["seed"])
        for name in ("q1", "q2", "q1_target", "q2_target", "policy"):
            setattr(agent, name, Mlp.from_dict(d[name]))
        agent.log_alpha = float(d["log_alpha"])
        agent._alpha_m[0] = d["alpha_adam"]["m"]
        agent._alpha_v[0] = d["alpha_adam"]["v"]
        agent.alpha_step = int(d["alpha_adam"]["step"])
        agent.updates = int(d["updates"])
        return agent


# -- losses ------------------------------------------------------------------------

def soft_value(q_min, pi, alpha: float) -> float:
    """Expected soft value sum_a pi(a) (Q(a) - alpha ln pi(a)); 0 ln 0 is 0."""
    q = np.asarray(q_min, dtype=np.float64)
    p = np.asarray(pi, dtype=np.float64)
    if q.shape != p.shape:
        raise ValueError(f"shape mismatch: q {q.shape} vs pi {p.shape}")
    logp = np.zeros_like(p)
    pos = p > 0
    logp[pos] = np.log(p[pos])
    return float(np.sum(p * (q - alpha * logp), axis=-1))


def _soft_values(q_min, logits, alpha):
    logp = log_softmax(logits)
    p = np.exp(logp)
    return np.sum(p * (q_min - alpha * logp), axis=-1)


def q_targets(agent: SacAgent, batch: Batch) -> np.ndarray:
    q_next = np.minimum(agent.q1_target(batch.s_next), agent.q2_target(batch.s_next))
    v_next = _soft_values(q_next, agent.policy(batch.s_next), agent.alpha)
    return batch.r + agent.gamma * (1.0 - batch.done) * v_next


def q_loss(agent: SacAgent, minibatch):
    """Soft Bellman residual of both critics.

    Returns ``(loss, (grad_q1, grad_q2))``; targets are held constant.
    """
    batch = _as_batch(minibatch)
    n = batch.size
    y = q_targets(agent, batch)
    rows = np.arange(n)
    loss = 0.0
    grads = []
    for net in (agent.q1, agent.q2):
        out, acts = net.forward_cache(batch.s)
        err = out[rows, batch.a] - y
        loss += 0.5 * float(np.mean(err ** 2))
        g_out = np.zeros_like(out)
        g_out[rows, batch.a] = err / (2 * n)
        grads.append(net.backward(acts, g_out))
    return loss / 2, tuple(grads)


def policy_loss(agent: SacAgent, minibatch, return_logits: bool = False):
    """Expected ``alpha ln pi - min Q`` under the policy, critics held constant.

    Returns ``(loss, grad_policy)`` and the logits when asked.
    """
    batch = _as_batch(minibatch)
    n = batch.size
    q_min = np.minimum(agent.q1(batch.s), agent.q2(batch.s))
    logits, acts = agent.policy.forward_cache(batch.s)
    logp = log_softmax(logits)
    p = np.exp(logp)
    g = agent.alpha * logp - q_min
    per_state = np.sum(p * g, axis=1)
    loss = float(np.mean(per_state))
    g_logits = p * (g - per_state[:, None]) / n
    grad = agent.policy.backward(acts, g_logits)
    if return_logits:
        return loss, grad, logits
    return loss, grad


def temperature_loss(agent: SacAgent, minibatch, logits=None):
    """Temperature objective and its derivative with respect to ``log_alpha``.

    With the policy held constant the objective is ``alpha (H - H_target)``
    averaged over states, so the derivative is the same expression.
    """
    batch = _as_batch(minibatch)
    if logits is None:
        logits = agent.policy(batch.s)
    logp = log_softmax(logits)
    entropy = -np.sum(np.exp(logp) * logp, axis=1)
    val = float(np.mean(agent.alpha * (entropy - agent.target_entropy)))
    return val, val


# -- acting ------------------------------------------------------------------------

def select_action(agent: SacAgent, s, mode: str, rng: np.random.Generator | None = None,
                  model: str | None = None) -> Action:
    """Sample from the policy in ``train`` mode; greedy in ``eval`` mode."""
    logits = agent.policy(s)
    if mode == "eval":
        return Action.from_index(int(np.argmax(logits)), model)
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if rng is None:
        raise ValueError("train mode needs an rng")
    cdf = np.cumsum(softmax(logits))
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return Action.from_index(min(idx, len(cdf) - 1), model)


@dataclass
class _Pending:
    agent_key: str
    s: np.ndarray
    a: int


@dataclass
class EpisodeStats:
    episode: int
    rewards: list = field(default_factory=list)
    q_losses: list = field(default_factory=list)
    pi_losses: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    log: list = field(default_factory=list)  # one dict per slot

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.rewards)) if self.rewards else 0.0


class SacScheduler:
    """Per-model SAC agents acting in catalog order on one platform.

    ``predictor`` is an optional admission layer with an ``admit(env, model,
    b, m_c, batch_slo)`` method; a vetoed action is replaced by (1, 1).
    """

    def __init__(self, models: Sequence[str], state_dim: int, config: SacConfig | None = None,
                 seed: int = 0, predictor=None):
        self.models = list(models)
        self.config = config or SacConfig()
        self.seed = int(seed)
        self.state_dim = int(state_dim)
        self.agents = {m: SacAgent(state_dim, N_ACTIONS, self.config,
                                   seed=derive_seed(seed, "agent", k))
                       for k, m in enumerate(self.models)}
        self.predictor = predictor
        self.mode = "eval"
        self.rng = np.random.default_rng(derive_seed(seed, "actions"))
        self.steps = 0  # environment slots trained on
        self.episodes = 0
        self._pending: list[_Pending] = []

    def plan_slot(self, env: EdgeEnv) -> None:
        self._pending = []
        for model in env.active_models():
            s = env.observe()
            action = select_action(self.agents[model], s, self.mode, self.rng, model)
            b, m_c, vetoed = action.b, action.m_c, False
            if self.predictor is not None and not self.predictor.admit(env, model, b, m_c):
                b, m_c, vetoed = 1, 1, True
            env.plan(model, b, m_c, vetoed=vetoed)
            # the transition keeps the action the agent chose
            self._pending.append(_Pending(model, s, action.flat_index))

    def check_env(self, env: EdgeEnv) -> None:
        names = [p.name for p in env.catalog]
        if env.state_dim != self.state_dim or names != self.models:
            raise ValueError(
                f"checkpoint dimension mismatch: state_dim {self.state_dim} for models "
                f"{self.models}, environment has state_dim {env.state_dim} for {names}")

    def to_dict(self) -> dict:
        return {
            "format": "edgesched-sac/1",
            "models": self.models,
            "state_dim": self.state_dim,
            "seed": self.seed,
            "steps": self.steps,
            "episodes": self.episodes,
            "agents": {m: a.to_dict() for m, a in self.agents.items()},
        }

    @classmethod
    def from_dict(cls, d: dict, predictor=None) -> "SacScheduler":
        if d.get("format") != "edgesched-sac/1":
            raise ValueError("not a scheduler checkpoint")
        first = next(iter(d["agents"].values()))
        sched = cls(d["models"], d["state_dim"], SacConfig(**first["config"]), seed=d["seed"],
                    predictor=predictor)
        sched.agents = {m: SacAgent.from_dict(a) for m, a in d["agents"].items()}
        sched.steps = int(d["steps"])
        sched.episodes = int(d["episodes"])
        return sched

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str, predictor=None) -> "SacScheduler":
        return cls.from_dict(json.loads(text), predictor)


def train_episode(sched: SacScheduler, env: EdgeEnv, steps: int | None = None,
                  episode: int | None = None, on_results=None) -> EpisodeStats:
    """Run one training episode of at most ``steps`` slots.

    Each slot every active model acts, the slot executes, each model's
    transition is stored, and every agent that stored one takes a gradient
    step once its buffer holds a minibatch. Running out of requests ends the
    episode as terminal; hitting the slot limit does not.
    """
    episode = sched.episodes if episode is None else int(episode)
    limit = env.config.episode_slots if steps is None else int(steps)
    if limit < 1:
        raise ValueError("steps must be >= 1")
    env.reset(episode)
    sched.mode = "train"
    sched.rng = np.random.default_rng(derive_seed(sched.seed, "actions", episode))
    update_rng = np.random.default_rng(derive_seed(sched.seed, "replay", episode))
    stats = EpisodeStats(episode)
    slot = 0
    while slot < limit and not env.done and env.begin_slot():
        sched.plan_slot(env)
        results: list[ModelResult] = env.execute()
        s_next, terminal = env.peek_next()
        by_model = {res.model: res for res in results}
        entry = {"slot": sched.steps, "reward": 0.0, "q_loss": None, "pi_loss": None,
                 "alpha": None, "utility": 0.0, "slo_violation_flag": False}
        ql, pl = [], []
        for pend in sched._pending:
            res = by_model[pend.agent_key]
            agent = sched.agents[pend.agent_key]
            agent.replay.add(pend.s, pend.a, res.reward, s_next, terminal)
            upd = agent.update(update_rng)
            if upd is not None:
                ql.append(upd.q_loss)
                pl.append(upd.pi_loss)
        if results:
            r = float(np.mean([res.reward for res in results]))
            entry["reward"] = r
            entry["utility"] = r
            entry["slo_violation_flag"] = any(res.record.violations > 0 for res in results)
            stats.rewards.append(r)
        if ql:
            entry["q_loss"] = float(np.mean(ql))
            entry["pi_loss"] = float(np.mean(pl))
            stats.q_losses.append(entry["q_loss"])
            stats.pi_losses.append(entry["pi_loss"])
        entry["alpha"] = float(np.mean([a.alpha for a in sched.agents.values()]))
        stats.alphas.append(entry["alpha"])
        stats.log.append(entry)
        if sched.predictor is not None:
            sched.predictor.observe_results(env, results)
        if on_results is not None:
            on_results(env, results)
        sched.steps += 1
        slot += 1
    sched._pending = []
    sched.episodes = episode + 1
    sched.mode = "eval"
    return stats
