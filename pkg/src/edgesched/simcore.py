"""Synthetic cost model and slot executor for a single edge accelerator.

Latency of a batch is affine in its size, inflated by a multiplicative
interference factor that grows with the number of resident instances and the
memory pressure; memory is a hard wall. All timestamps are integer
microseconds so that the per-request latency decomposition is exact.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import IO, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from edgesched import _kernels
from edgesched._toml import load_toml_text
from edgesched.workload import US_PER_MS, ModelProfile, Request


class UnknownModelError(LookupError):
    pass


@dataclass(frozen=True)
class PlatformSpec:
    mem_capacity: float = 8192.0  # MB
    net_in_ms_per_req: float = 2.0
    serialize_ms_per_req: float = 0.1
    net_out_ms: float = 1.0
    interference_kappa: float = 0.08
    interference_beta: float = 2.0
    interference_power: float = 1.0

    def __post_init__(self):
        if not self.mem_capacity > 0:
            raise ValueError("mem_capacity must be positive")
        for name in ("net_in_ms_per_req", "serialize_ms_per_req", "net_out_ms",
                     "interference_kappa", "interference_beta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.interference_power < 1:
            raise ValueError("interference_power must be >= 1")

    @property
    def fixed_us(self) -> int:
        """Per-request transmission + serialization + result return, in us."""
        return self.t_t_us + self.t_s_us + self.t_o_us

    @property
    def t_t_us(self) -> int:
        return ms_to_us(self.net_in_ms_per_req)

    @property
    def t_s_us(self) -> int:
        return ms_to_us(self.serialize_ms_per_req)

    @property
    def t_o_us(self) -> int:
        return ms_to_us(self.net_out_ms)

    @classmethod
    def from_mapping(cls, doc: Mapping) -> "PlatformSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown platform keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in doc.items()})

    @classmethod
    def load(cls, path) -> "PlatformSpec":
        doc = load_toml_text(Path(path).read_text())
        return cls.from_mapping(doc.get("platform", doc))

    def to_mapping(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def ms_to_us(ms: float) -> int:
    return int(round(ms * US_PER_MS))


def memory_footprint(profile: ModelProfile, b: int, m_c: int) -> float:
    """Resident MB of ``m_c`` instances each configured for batches of ``b``."""
    return m_c * (profile.weight_mem + b * profile.act_mem_per_item)


def interference_factor(n_active: int, mem_util: float, spec: PlatformSpec = PlatformSpec()) -> float:
    if n_active <= 1:
        return 1.0
    return 1.0 + spec.interference_kappa * (n_active - 1) ** spec.interference_power * (
        1.0 + spec.interference_beta * mem_util)


def batch_inference_time(profile: ModelProfile, b: int, factor: float = 1.0) -> float:
    """Execution time (ms) of one batch of ``b`` requests."""
    return (profile.base_latency + profile.per_item_cost * b) * factor


@dataclass
class SimClock:
    now: int = 0  # us
    event_count: int = 0

    def advance_to(self, t_us: int) -> None:
        if t_us > self.now:
            self.now = int(t_us)

    def tick(self) -> int:
        self.event_count += 1
        return self.event_count


@dataclass
class Dispatch:
    profile: ModelProfile
    batch: Sequence[Request]
    m_c: int
    b: int | None = None  # configured batch size; defaults to len(batch)

    @property
    def configured_b(self) -> int:
        return self.b if self.b is not None else max(1, len(self.batch))


class LatencyBreakdown(NamedTuple):
    t_t: int
    t_s: int
    t_w: int
    t_m: int
    t_o: int

    @property
    def total(self) -> int:
        return self.t_t + self.t_s + self.t_w + self.t_m + self.t_o


@dataclass
class ExecutionOutcome:
    """Result of one dispatch. Durations are integer microseconds."""

    model: str
    b: int
    m_c: int
    request_ids: tuple
    per_request_latency: dict = field(default_factory=dict)
    queue_us: dict = field(default_factory=dict)
    inference_us: int = 0
    mem_used: float = 0.0
    overflowed: bool = False
    slo_violations: frozenset = frozenset()
    start_us: int = 0
    end_us: int = 0
    factor: float = 1.0
    t_t_us: int = 0
    t_s_us: int = 0
    t_o_us: int = 0

    @property
    def inference_ms(self) -> float:
        return self.inference_us / US_PER_MS

    @property
    def executed(self) -> int:
        return len(self.per_request_latency)

    def breakdown(self, rid: int) -> LatencyBreakdown:
        return LatencyBreakdown(self.t_t_us, self.t_s_us, self.queue_us[rid],
                                self.inference_us, self.t_o_us)

    def mean_latency_ms(self) -> float:
        if not self.per_request_latency:
            return 0.0
        return sum(self.per_request_latency.values()) / len(self.per_request_latency) / US_PER_MS


class EventLog:
    """Line-delimited record of executor events."""

    def __init__(self):
        self.records: list[dict] = []

    def add(self, time_us, kind, model, batch_size, m_c, t_m_us, mem_used_mb, violated_ids):
        self.records.append({
            "time_us": int(time_us), "event_kind": kind, "model": model,
            "batch_size": int(batch_size), "m_c": int(m_c), "t_m_us": int(t_m_us),
            "mem_used_mb": float(mem_used_mb), "violated_ids": sorted(int(i) for i in violated_ids),
        })

    def write(self, fh: IO[str]) -> None:
        for rec in self.records:
            fh.write(json.dumps(rec) + "\n")

    @staticmethod
    def read(fh: IO[str]) -> list[dict]:
        return [json.loads(line) for line in fh if line.strip()]


def _lookup(catalog, name):
    if catalog is None:
        return None
    if isinstance(catalog, Mapping):
        return catalog.get(name)
    for p in catalog:
        if p.name == name:
            return p
    return None


def execute_slot(clock: SimClock, dispatches: Sequence[Dispatch], spec: PlatformSpec,
                 catalog: Iterable[ModelProfile] | Mapping | None = None,
                 log: EventLog | None = None) -> list[ExecutionOutcome]:
    """Admit and run one slot's dispatches starting at ``clock.now``.

    Dispatches are admitted in order against the memory capacity; a dispatch
    that would overflow is rejected whole and all its requests count as SLO
    violations. Admitted batches of one model share that model's ``m_c``
    instances; extra batches queue behind the earliest-free instance. The
    clock ends at the last completion.
    """
    start = clock.now
    for d in dispatches:
        if catalog is not None and _lookup(catalog, d.profile.name) is None:
            raise UnknownModelError(f"unknown model {d.profile.name!r}")
        if not d.batch:
            raise ValueError(f"empty batch dispatched for model {d.profile.name!r}")
        if d.m_c < 1:
            raise ValueError(f"m_c must be >= 1, got {d.m_c}")
        for r in d.batch:
            if r.arrival_us > start:
                raise ValueError(f"request {r.id} arrives after the slot start")

    # admission: one memory reservation per model, sized for its largest config
    reserved: dict[str, tuple] = {}
    used = 0.0
    admitted = []
    outcomes: list[ExecutionOutcome | None] = [None] * len(dispatches)
    for idx, d in enumerate(dispatches):
        name = d.profile.name
        prev_b, prev_mc, prev_mem = reserved.get(name, (0, 0, 0.0))
        b_new, mc_new = max(prev_b, d.configured_b), max(prev_mc, d.m_c)
        need = memory_footprint(d.profile, b_new, mc_new)
        if used - prev_mem + need > spec.mem_capacity:
            ids = tuple(r.id for r in d.batch)
            outcomes[idx] = ExecutionOutcome(
                model=name, b=d.configured_b, m_c=d.m_c, request_ids=ids, mem_used=used,
                overflowed=True, slo_violations=frozenset(ids), start_us=start, end_us=start,
                t_t_us=spec.t_t_us, t_s_us=spec.t_s_us, t_o_us=spec.t_o_us)
            if log is not None:
                clock.tick()
                log.add(start, "overflow", name, len(d.batch), d.m_c, 0, used, ids)
            continue
        used = used - prev_mem + need
        reserved[name] = (b_new, mc_new, need)
        admitted.append(idx)

    if not admitted:
        return outcomes

    n_active = sum(mc for _, mc, _ in reserved.values())
    mem_util = min(1.0, used / spec.mem_capacity)
    factor = interference_factor(n_active, mem_util, spec)

    groups = {name: g for g, name in enumerate(reserved)}
    group_mc = np.array([mc for _, mc, _ in reserved.values()], dtype=np.int64)
    batch_group = np.array([groups[dispatches[i].profile.name] for i in admitted], dtype=np.int64)
    batch_tm = np.array([ms_to_us(batch_inference_time(dispatches[i].profile,
                                                       len(dispatches[i].batch), factor))
                         for i in admitted], dtype=np.int64)
    arrivals, req_batch, slo_us = [], [], []
    for j, i in enumerate(admitted):
        for r in dispatches[i].batch:
            arrivals.append(r.arrival_us)
            req_batch.append(j)
            slo_us.append(r.slo * US_PER_MS)
    begin, end, wait, total, violated = _kernels.slot_schedule(
        int(start), np.array(arrivals, dtype=np.int64), np.array(req_batch, dtype=np.int64),
        batch_group, batch_tm, group_mc, int(spec.fixed_us), np.array(slo_us, dtype=np.float64))

    k = 0
    heap = []
    for j, i in enumerate(admitted):
        d = dispatches[i]
        ids = tuple(r.id for r in d.batch)
        n = len(ids)
        lat = dict(zip(ids, total[k:k + n].tolist()))
        qw = dict(zip(ids, wait[k:k + n].tolist()))
        viol = frozenset(rid for rid, v in zip(ids, violated[k:k + n]) if v)
        k += n
        outcomes[i] = ExecutionOutcome(
            model=d.profile.name, b=d.configured_b, m_c=reserved[d.profile.name][1],
            request_ids=ids, per_request_latency=lat, queue_us=qw,
            inference_us=int(batch_tm[j]), mem_used=used, overflowed=False,
            slo_violations=viol, start_us=int(begin[j]), end_us=int(end[j]), factor=factor,
            t_t_us=spec.t_t_us, t_s_us=spec.t_s_us, t_o_us=spec.t_o_us)
        heapq.heappush(heap, (int(end[j]), j, i))

    # completions in time order; equal times keep dispatch order
    while heap:
        t_end, _, i = heapq.heappop(heap)
        clock.advance_to(t_end)
        clock.tick()
        if log is not None:
            o = outcomes[i]
            log.add(t_end, "complete", o.model, len(o.request_ids), o.m_c, o.inference_us,
                    o.mem_used, o.slo_violations)
    return outcomes
