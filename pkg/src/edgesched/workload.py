"""Model catalog, request records and Poisson arrival generation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from edgesched._toml import load_toml_text

US_PER_MS = 1000
US_PER_S = 1_000_000


class CatalogError(ValueError):
    """Raised when a catalog document fails validation."""


@dataclass(frozen=True)
class ModelProfile:
    name: str
    slo: float  # ms
    base_latency: float  # ms, fixed launch cost per batch
    per_item_cost: float  # ms per batched request
    weight_mem: float  # MB per instance
    act_mem_per_item: float  # MB per batched request
    input_dim: int
    input_type: str = "image"

    def __post_init__(self):
        if not self.name:
            raise CatalogError("model entry has an empty name")
        if not self.slo > 0:
            raise CatalogError(f"model {self.name!r}: slo_ms must be positive, got {self.slo}")
        if not self.base_latency > 0:
            raise CatalogError(f"model {self.name!r}: base_latency_ms must be positive")
        if self.per_item_cost < 0:
            raise CatalogError(f"model {self.name!r}: per_item_cost_ms must be >= 0")
        if not self.weight_mem > 0:
            raise CatalogError(f"model {self.name!r}: weight_mem_mb must be positive")
        if self.act_mem_per_item < 0:
            raise CatalogError(f"model {self.name!r}: act_mem_per_item_mb must be >= 0")
        if int(self.input_dim) < 1:
            raise CatalogError(f"model {self.name!r}: input_dim must be a positive integer")
        if self.input_type not in ("image", "text"):
            raise CatalogError(f"model {self.name!r}: input_type must be 'image' or 'text'")


@dataclass(frozen=True)
class Request:
    id: int
    model: str
    input_type: str
    input_shape: tuple
    slo: float  # ms
    arrival_us: int

    @property
    def arrival_time(self) -> float:
        """Arrival timestamp in ms."""
        return self.arrival_us / US_PER_MS

    @property
    def deadline_us(self) -> float:
        return self.arrival_us + self.slo * US_PER_MS


@dataclass(frozen=True)
class ArrivalProcess:
    """Aggregate Poisson arrivals split over the catalog by ``mix``.

    ``rate`` is the platform-wide rate in requests/s; model ``k`` receives an
    independent Poisson stream of rate ``rate * mix[k]``.
    """

    rate: float
    mix: tuple
    seed: int
    horizon: float  # s

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"arrival rate must be positive, got {self.rate}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        mix = tuple(float(p) for p in self.mix)
        if any(p < 0 for p in mix):
            raise ValueError("mix entries must be non-negative")
        if abs(sum(mix) - 1.0) > 1e-9:
            raise ValueError(f"mix must sum to 1, got {sum(mix)!r}")
        object.__setattr__(self, "mix", mix)

    @classmethod
    def uniform(cls, n_models: int, rate: float = 30.0, seed: int = 0, horizon: float = 60.0):
        return cls(rate=rate, mix=tuple([1.0 / n_models] * n_models), seed=seed, horizon=horizon)


_REQUIRED_KEYS = {
    "name": str,
    "slo_ms": float,
    "base_latency_ms": float,
    "per_item_cost_ms": float,
    "weight_mem_mb": float,
    "act_mem_per_item_mb": float,
    "input_dim": int,
}


def _profile_from_entry(idx: int, entry: dict) -> ModelProfile:
    label = entry.get("name", f"#{idx}")
    for key in _REQUIRED_KEYS:
        if key not in entry:
            raise CatalogError(f"model {label!r}: missing field {key!r}")
    try:
        return ModelProfile(
            name=str(entry["name"]),
            slo=float(entry["slo_ms"]),
            base_latency=float(entry["base_latency_ms"]),
            per_item_cost=float(entry["per_item_cost_ms"]),
            weight_mem=float(entry["weight_mem_mb"]),
            act_mem_per_item=float(entry["act_mem_per_item_mb"]),
            input_dim=int(entry["input_dim"]),
            input_type=str(entry.get("input_type", "image")),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, CatalogError):
            raise
        raise CatalogError(f"model {label!r}: {exc}") from exc


def load_catalog(source) -> list[ModelProfile]:
    """Parse and validate a catalog.

    ``source`` may be a path, TOML text, or an already-parsed mapping with a
    ``model`` list (one table per model).
    """
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                    and source.endswith(".toml")):
        doc = load_toml_text(Path(source).read_text())
    elif isinstance(source, str):
        doc = load_toml_text(source)
    else:
        doc = source
    entries = doc.get("model", []) if isinstance(doc, dict) else list(doc)
    if not entries:
        raise CatalogError("no models")
    profiles = []
    seen = set()
    for i, entry in enumerate(entries):
        prof = _profile_from_entry(i, entry)
        if prof.name in seen:
            raise CatalogError(f"duplicate model name {prof.name!r}")
        seen.add(prof.name)
        profiles.append(prof)
    return profiles


def default_catalog() -> list[ModelProfile]:
    return load_catalog(Path(__file__).with_name("data") / "default_catalog.toml")


def catalog_to_toml(catalog: Sequence[ModelProfile]) -> str:
    lines = []
    for p in catalog:
        lines += [
            "[[model]]",
            f'name = "{p.name}"',
            f"slo_ms = {p.slo!r}",
            f"base_latency_ms = {p.base_latency!r}",
            f"per_item_cost_ms = {p.per_item_cost!r}",
            f"weight_mem_mb = {p.weight_mem!r}",
            f"act_mem_per_item_mb = {p.act_mem_per_item!r}",
            f"input_dim = {p.input_dim}",
            f'input_type = "{p.input_type}"',
            "",
        ]
    return "\n".join(lines)


def _input_shape(profile: ModelProfile) -> tuple:
    if profile.input_type == "text":
        return (1, profile.input_dim)
    side = int(round(math.sqrt(profile.input_dim / 3)))
    if 3 * side * side == profile.input_dim:
        return (3, side, side)
    return (profile.input_dim,)


def generate_arrivals(proc: ArrivalProcess, catalog: Sequence[ModelProfile]) -> list[Request]:
    """Merge independent per-model Poisson streams into one ordered trace."""
    if len(proc.mix) != len(catalog):
        raise ValueError(f"mix has {len(proc.mix)} entries for {len(catalog)} models")
    horizon_us = int(round(proc.horizon * US_PER_S))
    streams = np.random.SeedSequence(proc.seed).spawn(len(catalog))
    events = []
    for k, (profile, share) in enumerate(zip(catalog, proc.mix)):
        if share == 0:
            continue
        rng = np.random.default_rng(streams[k])
        mean_gap = 1.0 / (proc.rate * share)
        t = 0.0
        # draw gaps in chunks; expected count plus slack covers most traces in one pass
        chunk = max(16, int(proc.horizon / mean_gap * 1.2) + 16)
        done = False
        while not done:
            for gap in rng.exponential(mean_gap, size=chunk):
                t += gap
                t_us = int(t * US_PER_S)
                if t_us >= horizon_us:
                    done = True
                    break
                events.append((t_us, k))
    events.sort()
    shapes = [_input_shape(p) for p in catalog]
    return [
        Request(id=i, model=catalog[k].name, input_type=catalog[k].input_type,
                input_shape=shapes[k], slo=catalog[k].slo, arrival_us=t_us)
        for i, (t_us, k) in enumerate(events)
    ]


def scheduling_slot(batch: Sequence[Request], m_c: int) -> float:
    """Time budget of one scheduling decision: summed SLOs over instance count (ms)."""
    if not batch:
        raise ValueError("scheduling slot of an empty batch")
    if m_c < 1:
        raise ValueError(f"m_c must be >= 1, got {m_c}")
    return sum(r.slo for r in batch) / m_c


def write_trace(requests: Iterable[Request], fh: IO[str]) -> None:
    for r in requests:
        fh.write(json.dumps({"id": r.id, "model": r.model, "arrival_us": r.arrival_us,
                             "slo_ms": r.slo}) + "\n")


def read_trace(fh: IO[str], catalog: Sequence[ModelProfile]) -> list[Request]:
    by_name = {p.name: p for p in catalog}
    out = []
    for line in fh:
        if not line.strip():
            continue
        rec = json.loads(line)
        prof = by_name.get(rec["model"])
        if prof is None:
            raise CatalogError(f"trace references unknown model {rec['model']!r}")
        out.append(Request(id=int(rec["id"]), model=prof.name, input_type=prof.input_type,
                           input_shape=_input_shape(prof), slo=float(rec["slo_ms"]),
                           arrival_us=int(rec["arrival_us"])))
    return out
