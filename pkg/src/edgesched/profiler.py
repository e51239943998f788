"""Per-slot performance records, the utility function, and aggregation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import IO, Iterable, Sequence

UTILITY_CLIP = 10.0


def utility(T: float, L: float, slo_sum: float, m_c: int) -> float:
    """Log of throughput over SLO-normalized latency, clipped to [-10, 10].

    ``T`` in requests/s, ``L`` and ``slo_sum`` in ms.
    """
    if not (T > 0 and L > 0 and slo_sum > 0):
        raise ValueError(f"utility needs positive T, L, slo_sum (got {T}, {L}, {slo_sum})")
    if m_c < 1:
        raise ValueError(f"m_c must be >= 1, got {m_c}")
    u = math.log(T * slo_sum / (L * m_c))
    return min(UTILITY_CLIP, max(-UTILITY_CLIP, u))


@dataclass
class SlotRecord:
    slot_index: int
    model: str
    b: int
    m_c: int
    throughput: float  # requests/s
    mean_latency: float  # ms
    utility: float
    violations: int
    total: int
    mem_util: float
    overflow: bool
    executed: int = 0
    start_us: int = 0
    duration_us: int = 0
    vetoed: bool = False

    def __post_init__(self):
        if not 0 <= self.violations <= self.total:
            raise ValueError(f"violations {self.violations} outside [0, {self.total}]")
        if not math.isfinite(self.utility):
            raise ValueError("utility must be finite")

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "SlotRecord":
        return cls(**d)


def write_records(records: Iterable[SlotRecord], fh: IO[str]) -> None:
    for r in records:
        fh.write(r.to_json() + "\n")


def read_records(fh: IO[str]) -> list[SlotRecord]:
    return [SlotRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


@dataclass
class Summary:
    """Additive run statistics; ``merge`` is associative."""

    n_records: int = 0
    utility_sum: float = 0.0
    violations: int = 0
    total: int = 0
    executed: int = 0
    latency_sum: float = 0.0  # ms, request weighted
    executed_per_model: dict = field(default_factory=dict)
    first_start_us: int | None = None
    last_end_us: int | None = None

    @property
    def mean_utility(self) -> float:
        return self.utility_sum / self.n_records if self.n_records else 0.0

    @property
    def violation_rate(self) -> float:
        return self.violations / self.total if self.total else 0.0

    @property
    def mean_latency(self) -> float:
        return self.latency_sum / self.executed if self.executed else 0.0

    @property
    def span_s(self) -> float:
        if self.first_start_us is None:
            return 0.0
        return (self.last_end_us - self.first_start_us) / 1e6

    def throughput_per_model(self) -> dict:
        span = self.span_s
        return {m: (n / span if span > 0 else 0.0) for m, n in sorted(self.executed_per_model.items())}

    @property
    def throughput(self) -> float:
        return sum(self.throughput_per_model().values())

    def merge(self, other: "Summary") -> "Summary":
        per_model = dict(self.executed_per_model)
        for m, n in other.executed_per_model.items():
            per_model[m] = per_model.get(m, 0) + n
        starts = [s for s in (self.first_start_us, other.first_start_us) if s is not None]
        ends = [e for e in (self.last_end_us, other.last_end_us) if e is not None]
        return Summary(
            n_records=self.n_records + other.n_records,
            utility_sum=self.utility_sum + other.utility_sum,
            violations=self.violations + other.violations,
            total=self.total + other.total,
            executed=self.executed + other.executed,
            latency_sum=self.latency_sum + other.latency_sum,
            executed_per_model=per_model,
            first_start_us=min(starts) if starts else None,
            last_end_us=max(ends) if ends else None,
        )

    def report(self) -> dict:
        return {
            "records": self.n_records,
            "mean_utility": self.mean_utility,
            "violation_rate": self.violation_rate,
            "mean_latency_ms": self.mean_latency,
            "throughput_rps": self.throughput,
            "throughput_per_model": self.throughput_per_model(),
            "requests": self.total,
            "executed": self.executed,
            "violations": self.violations,
        }


def aggregate(records: Sequence[SlotRecord], window: int | None = None) -> Summary:
    """Summarize the records of the last ``window`` slots (all slots if None)."""
    if not records:
        raise ValueError("no records to aggregate")
    if window is not None:
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        last = max(r.slot_index for r in records)
        records = [r for r in records if r.slot_index > last - window]
    s = Summary()
    for r in records:
        s.n_records += 1
        s.utility_sum += r.utility
        s.violations += r.violations
        s.total += r.total
        s.executed += r.executed
        s.latency_sum += r.mean_latency * r.executed
        s.executed_per_model[r.model] = s.executed_per_model.get(r.model, 0) + r.executed
        end = r.start_us + r.duration_us
        s.first_start_us = r.start_us if s.first_start_us is None else min(s.first_start_us, r.start_us)
        s.last_end_us = end if s.last_end_us is None else max(s.last_end_us, end)
    return s
