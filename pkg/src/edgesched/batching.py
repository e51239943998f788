"""Per-model request queues with SLO-priority ordering and batch formation."""

from __future__ import annotations

import bisect
from typing import NamedTuple

from edgesched.workload import US_PER_MS, Request


def _priority(r: Request):
    # shorter SLO first, then arrival order, then id
    return (r.slo, r.arrival_us, r.id)


class HeadMetrics(NamedTuple):
    length: int
    head_age: float  # ms
    min_slo: float  # ms


class ModelQueue:
    """Pending requests of one model plus the batches formed from them.

    ``pending`` is kept sorted by (slo, arrival, id). ``slots`` holds formed
    batches until the executor pulls them.
    """

    def __init__(self, model: str, catalog_slo: float):
        self.model = model
        self.catalog_slo = float(catalog_slo)
        self.pending: list[Request] = []
        self._keys: list[tuple] = []
        self.slots: list[list[Request]] = []

    def __len__(self):
        return len(self.pending)

    def enqueue(self, r: Request) -> "ModelQueue":
        if r.model != self.model:
            raise ValueError(f"request for model {r.model!r} enqueued on {self.model!r} queue")
        key = _priority(r)
        i = bisect.bisect_right(self._keys, key)
        self._keys.insert(i, key)
        self.pending.insert(i, r)
        return self

    def form_batch(self, b: int) -> list[Request]:
        """Move up to ``b`` head requests into a new batching slot and return it."""
        if b < 1:
            raise ValueError(f"batch size must be >= 1, got {b}")
        n = min(b, len(self.pending))
        if n == 0:
            return []
        batch = self.pending[:n]
        del self.pending[:n]
        del self._keys[:n]
        self.slots.append(batch)
        return batch

    def pull(self) -> list[list[Request]]:
        """Hand all formed batches to the executor."""
        out, self.slots = self.slots, []
        return out

    def head_metrics(self, now_us: int) -> HeadMetrics:
        if not self.pending:
            return HeadMetrics(0, 0.0, self.catalog_slo)
        head = self.pending[0]
        return HeadMetrics(len(self.pending), (now_us - head.arrival_us) / US_PER_MS, head.slo)

    def head(self) -> Request | None:
        return self.pending[0] if self.pending else None


def enqueue(q: ModelQueue, r: Request) -> ModelQueue:
    return q.enqueue(r)


def form_batch(q: ModelQueue, b: int):
    batch = q.form_batch(b)
    return batch, q


def head_metrics(q: ModelQueue, now_us: int) -> HeadMetrics:
    return q.head_metrics(now_us)
