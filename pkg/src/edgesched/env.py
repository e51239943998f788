"""Slot-stepped simulation environment shared by every scheduler.

A slot proceeds as: arrivals up to ``now`` enter their model queues (if every
queue is empty the clock jumps to the next arrival), the scheduler plans one
action per model, the executor runs the planned batches, and one
``SlotRecord`` per dispatched model is produced. Rewards are the utility of
each model's dispatch over its scheduling slot.

With ``saturate=True`` the arrival trace is replaced by a closed-loop load:
when a model is planned its queue is topped up with requests arriving at the
slot start so every formed batch is full. This is the setting of a throughput
benchmark that keeps ``b * m_c`` requests outstanding.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from edgesched.batching import ModelQueue
from edgesched.profiler import UTILITY_CLIP, SlotRecord, utility
from edgesched.simcore import (Dispatch, EventLog, ExecutionOutcome, PlatformSpec, SimClock,
                               execute_slot, memory_footprint)
from edgesched.workload import (ArrivalProcess, ModelProfile, Request,
                                _input_shape, generate_arrivals, scheduling_slot)

BATCH_SIZES = (1, 2, 4, 8, 16, 32, 64, 128)
CONCURRENCY = (1, 2, 3, 4, 5, 6, 7, 8)
QUEUE_CLIP = 64
OVERFLOW_PENALTY = -10.0


def derive_seed(root: int, name: str, *index: int) -> int:
    """Stable integer seed for a named sub-stream of ``root``."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(name.encode()), *[int(i) for i in index]])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class EnvConfig:
    catalog: tuple
    spec: PlatformSpec = PlatformSpec()
    rate: float = 30.0
    mix: tuple | None = None
    horizon: float = 120.0  # s of trace per episode
    saturate: bool = False
    episode_slots: int = 256
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "catalog", tuple(self.catalog))
        if not self.catalog:
            raise ValueError("environment needs at least one model")
        if self.mix is None:
            n = len(self.catalog)
            object.__setattr__(self, "mix", tuple([1.0 / n] * n))

    def with_catalog(self, catalog: Sequence[ModelProfile]) -> "EnvConfig":
        return replace(self, catalog=tuple(catalog), mix=None)

    def arrival_process(self, episode: int) -> ArrivalProcess:
        return ArrivalProcess(rate=self.rate, mix=self.mix,
                              seed=derive_seed(self.seed, "arrivals", episode),
                              horizon=self.horizon)


def merge_outcomes(outs: Sequence[ExecutionOutcome]) -> ExecutionOutcome:
    """Combine one model's dispatch outcomes from a slot into one outcome."""
    if len(outs) == 1:
        return outs[0]
    first = outs[0]
    lat, qw, ids, viol = {}, {}, [], set()
    for o in outs:
        lat.update(o.per_request_latency)
        qw.update(o.queue_us)
        ids.extend(o.request_ids)
        viol |= o.slo_violations
    return ExecutionOutcome(
        model=first.model, b=max(o.b for o in outs), m_c=max(o.m_c for o in outs),
        request_ids=tuple(ids), per_request_latency=lat, queue_us=qw,
        inference_us=max(o.inference_us for o in outs), mem_used=max(o.mem_used for o in outs),
        overflowed=any(o.overflowed for o in outs), slo_violations=frozenset(viol),
        start_us=min(o.start_us for o in outs), end_us=max(o.end_us for o in outs),
        factor=first.factor, t_t_us=first.t_t_us, t_s_us=first.t_s_us, t_o_us=first.t_o_us)


@dataclass
class ModelResult:
    model: str
    b: int
    m_c: int
    batch: list
    outcome: ExecutionOutcome
    reward: float
    record: SlotRecord
    vetoed: bool = False
    features: np.ndarray | None = None  # predictor inputs as seen when planned


@dataclass
class _Plan:
    b: int
    m_c: int
    batches: list
    vetoed: bool = False
    features: np.ndarray | None = None


class EdgeEnv:
    def __init__(self, config: EnvConfig, log_events: bool = False):
        self.config = config
        self.catalog = list(config.catalog)
        self.by_name = {p.name: p for p in self.catalog}
        self.spec = config.spec
        self.max_slo = max(p.slo for p in self.catalog)
        self.max_dim = max(p.input_dim for p in self.catalog)
        self.max_instances = len(self.catalog) * CONCURRENCY[-1]
        self.state_dim = len(self.catalog) * (len(self.catalog) + 4) + 3
        self.log_events = log_events
        self.episode = -1
        self.reset(0)

    # -- episode control -------------------------------------------------
    def reset(self, episode: int | None = None, trace: Sequence[Request] | None = None):
        self.episode = self.episode + 1 if episode is None else int(episode)
        self.clock = SimClock()
        self.queues = {p.name: ModelQueue(p.name, p.slo) for p in self.catalog}
        if trace is not None:
            self.trace = list(trace)
        elif self.config.saturate:
            self.trace = []
        else:
            self.trace = generate_arrivals(self.config.arrival_process(self.episode), self.catalog)
        self._next = 0
        self._fresh_id = 0
        self.slot_index = 0
        self.last_utility = 0.0
        self.exhausted = False
        self.events = EventLog() if self.log_events else None
        self.counts = {"generated": 0, "executed": 0, "dropped": 0}
        self._plans: dict[str, _Plan] = {}
        self._slot_open = False
        return self

    @property
    def done(self) -> bool:
        return self.exhausted or self.slot_index >= self.config.episode_slots

    def queued(self) -> int:
        return sum(len(q) for q in self.queues.values())

    def _ingest(self) -> None:
        now = self.clock.now
        while self._next < len(self.trace) and self.trace[self._next].arrival_us <= now:
            r = self.trace[self._next]
            self.queues[r.model].enqueue(r)
            self.counts["generated"] += 1
            self._next += 1

    def begin_slot(self) -> bool:
        """Open a slot; returns False when no work remains in the episode."""
        if self._slot_open:
            return True
        self._ingest()
        if not self.config.saturate and self.queued() == 0:
            if self._next >= len(self.trace):
                self.exhausted = True
                return False
            self.clock.advance_to(self.trace[self._next].arrival_us)
            self._ingest()
        self._plans = {}
        self._slot_open = True
        return True

    def active_models(self) -> list[str]:
        """Models that need a decision this slot, in catalog order."""
        if self.config.saturate:
            return [p.name for p in self.catalog]
        return [p.name for p in self.catalog if len(self.queues[p.name]) > 0]

    # -- observation -----------------------------------------------------
    def _planned_usage(self):
        mem = 0.0
        inst = 0
        for name, plan in self._plans.items():
            if plan.batches:
                mem += memory_footprint(self.by_name[name], plan.b, plan.m_c)
                inst += plan.m_c
        return mem, inst

    def observe(self) -> np.ndarray:
        """State vector at the current decision point."""
        now = self.clock.now
        n = len(self.catalog)
        s = np.zeros(self.state_dim)
        for k, p in enumerate(self.catalog):
            base = k * (n + 4)
            s[base + k] = 1.0
            q = self.queues[p.name]
            length, age, min_slo = q.head_metrics(now)
            s[base + n] = p.input_dim / self.max_dim
            s[base + n + 1] = min_slo / self.max_slo
            s[base + n + 2] = min(length, QUEUE_CLIP) / QUEUE_CLIP
            s[base + n + 3] = min(max(age, 0.0) / self.max_slo, 1.0)
        mem, inst = self._planned_usage()
        s[-3] = min(1.0, mem / self.spec.mem_capacity)
        s[-2] = min(1.0, inst / self.max_instances)
        s[-1] = max(-UTILITY_CLIP, min(UTILITY_CLIP, self.last_utility)) / UTILITY_CLIP
        return s

    def peek_next(self) -> tuple[np.ndarray, bool]:
        """State after the last slot with arrivals so far ingested, and
        whether the episode has run out of requests."""
        self._ingest()
        terminal = (not self.config.saturate and self.queued() == 0
                    and self._next >= len(self.trace))
        return self.observe(), terminal

    def predictor_features(self, model: str, b: int, m_c: int, mem_used: float | None = None,
                           n_instances: int | None = None) -> np.ndarray:
        """Inputs of the latency predictor for a proposed (b, m_c) on ``model``.

        Without explicit usage figures the tentative plan of this slot plus
        the proposal itself is used.
        """
        prof = self.by_name[model]
        if mem_used is None or n_instances is None:
            mem, inst = self._planned_usage()
            mem += memory_footprint(prof, b, m_c)
            inst += m_c
        else:
            mem, inst = mem_used, n_instances
        qlen = len(self.queues[model])
        b_eff = b if self.config.saturate else max(1, min(b, qlen))
        return feature_vector(self.catalog, model, mem / self.spec.mem_capacity,
                              inst / self.max_instances, b_eff, m_c)

    # -- acting ----------------------------------------------------------
    def plan(self, model: str, b: int, m_c: int, vetoed: bool = False) -> list:
        """Form up to ``m_c`` batches of at most ``b`` requests for ``model``."""
        if not self._slot_open:
            raise RuntimeError("plan() outside an open slot")
        if model in self._plans:
            raise ValueError(f"model {model!r} already planned this slot")
        q = self.queues[model]
        features = self.predictor_features(model, b, m_c)
        if self.config.saturate:
            prof = self.by_name[model]
            while len(q) < b * m_c:
                q.enqueue(Request(id=self._fresh_id, model=model, input_type=prof.input_type,
                                  input_shape=_input_shape(prof), slo=prof.slo,
                                  arrival_us=self.clock.now))
                self._fresh_id += 1
                self.counts["generated"] += 1
        batches = []
        for _ in range(m_c):
            batch = q.form_batch(b)
            if not batch:
                break
            batches.append(batch)
        q.pull()
        self._plans[model] = _Plan(b=b, m_c=m_c, batches=batches, vetoed=vetoed,
                                   features=features)
        return batches

    def execute(self) -> list[ModelResult]:
        """Run the planned dispatches and close the slot."""
        if not self._slot_open:
            raise RuntimeError("execute() outside an open slot")
        start = self.clock.now
        dispatches, owners = [], []
        for name, plan in self._plans.items():
            for batch in plan.batches:
                dispatches.append(Dispatch(self.by_name[name], batch, plan.m_c, b=plan.b))
                owners.append(name)
        outcomes = execute_slot(self.clock, dispatches, self.spec, self.by_name, self.events)
        per_model: dict[str, list] = {}
        for name, o in zip(owners, outcomes):
            per_model.setdefault(name, []).append(o)
        mem_util = 0.0
        for o in outcomes:
            mem_util = max(mem_util, o.mem_used / self.spec.mem_capacity)
        results = []
        for name, plan in self._plans.items():
            if not plan.batches:
                continue
            batch = [r for bt in plan.batches for r in bt]
            out = merge_outcomes(per_model[name])
            r = reward(out, batch, plan.b, plan.m_c, scheduling_slot(batch, plan.m_c))
            rec = make_record(self.slot_index, out, batch, plan.b, plan.m_c, r, start,
                              min(1.0, mem_util), plan.vetoed)
            if out.overflowed:
                self.counts["dropped"] += len(batch)
            else:
                self.counts["executed"] += out.executed
            results.append(ModelResult(name, plan.b, plan.m_c, batch, out, r, rec, plan.vetoed,
                                       plan.features))
        if results:
            self.last_utility = float(np.mean([res.reward for res in results]))
        self.slot_index += 1
        self._plans = {}
        self._slot_open = False
        return results


def feature_vector(catalog, model, mem_frac, inst_frac, b, m_c) -> np.ndarray:
    onehot = [1.0 if p.name == model else 0.0 for p in catalog]
    return np.array([max(0.0, 1.0 - min(1.0, mem_frac)), max(0.0, 1.0 - min(1.0, inst_frac)),
                     m_c / CONCURRENCY[-1], b / BATCH_SIZES[-1], *onehot])


def reward(outcome: ExecutionOutcome, batch: Sequence[Request], b: int, m_c: int,
           slot: float) -> float:
    """Utility of one model's dispatch.

    Throughput counts the batch over ``slot`` ms, the decision interval
    (sum of SLOs over concurrency for the scheduling slot).
    """
    if outcome.overflowed:
        return OVERFLOW_PENALTY
    if not slot > 0:
        raise ValueError(f"slot duration must be positive, got {slot}")
    throughput = len(batch) / (slot / 1000.0)
    latency = outcome.mean_latency_ms()
    return utility(throughput, latency, sum(r.slo for r in batch), m_c)


def make_record(slot_index, out: ExecutionOutcome, batch, b, m_c, r, start_us, mem_util,
                vetoed=False) -> SlotRecord:
    duration = out.end_us - start_us
    if out.overflowed:
        return SlotRecord(slot_index=slot_index, model=out.model, b=b, m_c=m_c, throughput=0.0,
                          mean_latency=0.0, utility=r, violations=len(batch), total=len(batch),
                          mem_util=mem_util, overflow=True, executed=0, start_us=start_us,
                          duration_us=0, vetoed=vetoed)
    return SlotRecord(slot_index=slot_index, model=out.model, b=b, m_c=m_c,
                      throughput=len(batch) / (duration / 1e6), mean_latency=out.mean_latency_ms(),
                      utility=r, violations=len(out.slo_violations), total=len(batch),
                      mem_util=mem_util, overflow=False, executed=out.executed,
                      start_us=start_us, duration_us=duration, vetoed=vetoed)
