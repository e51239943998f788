"""Comparison schedulers: static configurations, EDF batching and a GA.

All of them drive the same ``EdgeEnv`` and are scored with the same utility
as the learned scheduler.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import IO, Callable, Mapping, Sequence

import numpy as np

from edgesched.batching import ModelQueue
from edgesched.env import BATCH_SIZES, CONCURRENCY, EdgeEnv, EnvConfig, derive_seed
from edgesched.profiler import SlotRecord, aggregate
from edgesched.simcore import PlatformSpec, batch_inference_time
from edgesched.workload import US_PER_MS, ModelProfile


# evaluation traces are drawn from episodes far past any training episode
EVAL_EPISODE = 1_000_000


def run_policy(env: EdgeEnv, policy, slots: int, on_results: Callable | None = None,
               start_episode: int = EVAL_EPISODE) -> list[SlotRecord]:
    """Run ``policy`` for ``slots`` slots, rolling over episodes as needed.

    Record slot indices and start times are made global across episodes.
    """
    env.reset(start_episode)
    records: list[SlotRecord] = []
    done_slots = 0
    t_offset = 0  # episodes restart the clock; keep record times monotone
    while done_slots < slots:
        if env.done or not env.begin_slot():
            t_offset += env.clock.now
            env.reset(env.episode + 1)
            continue
        policy.plan_slot(env)
        results = env.execute()
        for res in results:
            res.record.slot_index = done_slots
            res.record.start_us += t_offset
            records.append(res.record)
        if on_results is not None:
            on_results(env, results)
        done_slots += 1
    return records


class StaticPolicy:
    """Fixed (b, m_c) per model."""

    def __init__(self, config: Mapping[str, tuple]):
        self.config = {k: (int(v[0]), int(v[1])) for k, v in config.items()}

    def plan_slot(self, env: EdgeEnv) -> None:
        for name in env.active_models():
            b, m_c = self.config[name]
            env.plan(name, b, m_c)


def evaluate_static(config: EnvConfig, static: Mapping[str, tuple], slots: int) -> list[SlotRecord]:
    return run_policy(EdgeEnv(config), StaticPolicy(static), slots)


@dataclass
class SweepRow:
    model: str
    b: int
    m_c: int
    mean_utility: float
    violation_rate: float
    overflow_fraction: float
    throughput: float
    mean_latency: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class SweepResult:
    best: dict
    best_utility: dict
    table: list = field(default_factory=list)

    def write(self, fh: IO[str]) -> None:
        for row in self.table:
            fh.write(row.to_json() + "\n")


def static_sweep(config: EnvConfig, slots: int, b_values: Sequence[int] = BATCH_SIZES,
                 mc_values: Sequence[int] = CONCURRENCY) -> SweepResult:
    """Score every (b, m_c) for each model on its own, under a fixed seed.

    Each model is evaluated in a single-model environment built from
    ``config``. The best point has the highest mean utility; ties go to the
    lexicographically smallest (b, m_c).
    """
    if not b_values or not mc_values:
        raise ValueError("empty sweep grid")
    best, best_u, table = {}, {}, []
    for prof in config.catalog:
        single = config.with_catalog([prof])
        for b in sorted(b_values):
            for m_c in sorted(mc_values):
                recs = evaluate_static(single, {prof.name: (b, m_c)}, slots)
                s = aggregate(recs)
                row = SweepRow(model=prof.name, b=b, m_c=m_c, mean_utility=s.mean_utility,
                               violation_rate=s.violation_rate,
                               overflow_fraction=sum(r.overflow for r in recs) / len(recs),
                               throughput=s.throughput, mean_latency=s.mean_latency)
                table.append(row)
                if prof.name not in best or row.mean_utility > best_u[prof.name]:
                    best[prof.name] = (b, m_c)
                    best_u[prof.name] = row.mean_utility
    return SweepResult(best=best, best_utility=best_u, table=table)


# -- EDF with dynamic batching -------------------------------------------------

def edf_schedule(queues: Mapping[str, ModelQueue], now_us: int, catalog: Sequence[ModelProfile],
                 spec: PlatformSpec, b_values: Sequence[int] = BATCH_SIZES):
    """Pick the queue whose head deadline is earliest and size its batch.

    Returns ``(model, b, 1)`` or None when every queue is empty. The batch is
    the largest grid size whose predicted completion (no interference) still
    meets the head deadline, capped by the queue length. When no size meets
    it the head is already late and the queue is drained with the largest
    size instead.
    """
    best = None
    for prof in catalog:
        q = queues[prof.name]
        head = q.head()
        if head is None:
            continue
        key = (head.deadline_us, head.arrival_us, head.id)
        if best is None or key < best[0]:
            best = (key, prof, q)
    if best is None:
        return None
    (deadline, _, _), prof, q = best
    fixed = spec.fixed_us
    feasible = [b for b in sorted(b_values)
                if now_us + fixed + batch_inference_time(prof, b) * US_PER_MS <= deadline]
    b = feasible[-1] if feasible else max(b_values)
    return prof.name, max(1, min(len(q), b)), 1


class EdfPolicy:
    def __init__(self, b_values: Sequence[int] = BATCH_SIZES):
        self.b_values = tuple(b_values)

    def plan_slot(self, env: EdgeEnv) -> None:
        if env.config.saturate:
            decision = _edf_backlogged(env, self.b_values)
        else:
            decision = edf_schedule(env.queues, env.clock.now, env.catalog, env.spec,
                                    self.b_values)
        if decision is not None:
            model, b, m_c = decision
            env.plan(model, b, m_c)


def _edf_backlogged(env: EdgeEnv, b_values):
    # closed-loop load: every queue holds requests arriving now, so the
    # earliest deadline belongs to the tightest SLO
    prof = min(env.catalog, key=lambda p: p.slo)
    fixed = env.spec.fixed_us
    feasible = [b for b in sorted(b_values)
                if fixed + batch_inference_time(prof, b) * US_PER_MS <= prof.slo * US_PER_MS]
    return prof.name, (feasible[-1] if feasible else max(b_values)), 1


# -- genetic algorithm over static configurations ------------------------------

@dataclass
class GaResult:
    best: dict
    best_fitness: float
    history: list  # best fitness per generation, generation 0 first
    evaluations: int


def _decode(genes, catalog) -> dict:
    return {p.name: (BATCH_SIZES[genes[2 * k]], CONCURRENCY[genes[2 * k + 1]])
            for k, p in enumerate(catalog)}


def ga_optimize(config: EnvConfig, generations: int, pop_size: int = 16, seed: int = 0,
                slots: int = 200, mutation_rate: float = 0.1, tournament: int = 2) -> GaResult:
    """Evolve per-model (b, m_c) genes; fitness is mean utility on ``config``."""
    if pop_size < 4 or pop_size % 2:
        raise ValueError(f"pop_size must be even and >= 4, got {pop_size}")
    if generations < 0:
        raise ValueError("generations must be >= 0")
    rng = np.random.default_rng(derive_seed(seed, "ga"))
    catalog = list(config.catalog)
    n_genes = 2 * len(catalog)
    gene_max = [len(BATCH_SIZES) if g % 2 == 0 else len(CONCURRENCY) for g in range(n_genes)]
    cache: dict[tuple, float] = {}

    def fitness(genes) -> float:
        key = tuple(int(g) for g in genes)
        if key not in cache:
            recs = evaluate_static(config, _decode(key, catalog), slots)
            cache[key] = aggregate(recs).mean_utility
        return cache[key]

    pop = [np.array([rng.integers(0, m) for m in gene_max]) for _ in range(pop_size)]
    fit = [fitness(ind) for ind in pop]
    history = [max(fit)]
    for _ in range(generations):
        elite = int(np.argmax(fit))
        children = [pop[elite].copy()]

        def select():
            idx = rng.integers(0, pop_size, size=tournament)
            return pop[max(idx, key=lambda i: (fit[i], -i))]

        while len(children) < pop_size:
            a, b = select().copy(), select().copy()
            if n_genes > 1:
                cut = int(rng.integers(1, n_genes))
                a[cut:], b[cut:] = b[cut:].copy(), a[cut:].copy()
            for child in (a, b):
                for g in range(n_genes):
                    if rng.random() < mutation_rate:
                        child[g] = rng.integers(0, gene_max[g])
                if len(children) < pop_size:
                    children.append(child)
        pop = children
        fit = [fitness(ind) for ind in pop]
        history.append(max(fit))
    best_i = int(np.argmax(fit))
    return GaResult(best=_decode(pop[best_i], catalog), best_fitness=fit[best_i],
                    history=history, evaluations=len(cache))
