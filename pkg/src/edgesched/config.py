"""Run configuration: one TOML file plus command-line overrides.

Relative paths are resolved against the config file's directory; the
values ``builtin:default`` and ``builtin:toy`` name the catalogs and
platform specs shipped with the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from edgesched._toml import load_toml_text
from edgesched.env import BATCH_SIZES, CONCURRENCY, EnvConfig
from edgesched.sac import SacConfig
from edgesched.simcore import PlatformSpec
from edgesched.workload import CatalogError, ModelProfile, load_catalog

DATA_DIR = Path(__file__).with_name("data")
BUILTIN_CATALOGS = {"default": "default_catalog.toml", "toy": "toy_catalog.toml"}
BUILTIN_PLATFORMS = {"default": "default_platform.toml", "toy": "toy_platform.toml"}
SCHEDULERS = ("sac", "static", "edf", "ga")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


@dataclass
class GaSettings:
    generations: int = 50
    pop_size: int = 16
    slots: int = 200
    mutation_rate: float = 0.1
    tournament: int = 2


@dataclass
class RunConfig:
    catalog: list
    platform: PlatformSpec
    seed: int
    scheduler: str = "sac"
    rate: float = 30.0
    mix: tuple | None = None
    horizon: float = 120.0
    saturate: bool = False
    episode_slots: int = 256
    train_slots: int = 4096
    slots: int = 2000  # evaluation / replay length
    out: Path = Path("runs")
    predictor: bool = False
    sac: SacConfig = field(default_factory=SacConfig)
    static: dict = field(default_factory=dict)
    ga: GaSettings = field(default_factory=GaSettings)
    sweep_slots: int = 64
    sweep_b: tuple = BATCH_SIZES
    sweep_mc: tuple = CONCURRENCY
    sweep_saturate: bool = True  # sweeps keep every batch full
    trace: Path | None = None

    def env_config(self) -> EnvConfig:
        return EnvConfig(catalog=tuple(self.catalog), spec=self.platform, rate=self.rate,
                         mix=self.mix, horizon=self.horizon, saturate=self.saturate,
                         episode_slots=self.episode_slots, seed=self.seed)


def _resolve(value, base: Path, builtins: dict, name: str) -> Path:
    if not isinstance(value, str) or not value:
        raise ConfigError(name, "expected a path string")
    if value.startswith("builtin:"):
        key = value.split(":", 1)[1]
        if key not in builtins:
            raise ConfigError(name, f"unknown builtin {key!r}")
        return DATA_DIR / builtins[key]
    path = Path(value)
    return path if path.is_absolute() else base / path


def _number(doc: dict, key: str, kind, name: str | None = None, positive: bool = False):
    name = name or key
    val = doc[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(name, f"expected a number, got {val!r}")
    if kind is int and float(val) != int(val):
        raise ConfigError(name, f"expected an integer, got {val!r}")
    val = kind(val)
    if positive and not val > 0:
        raise ConfigError(name, f"must be positive, got {val!r}")
    return val


def load_catalog_file(path: Path) -> list[ModelProfile]:
    if not path.is_file():
        raise ConfigError("catalog", f"file not found: {path}")
    try:
        return load_catalog(path)
    except CatalogError as exc:
        raise ConfigError("catalog", str(exc)) from exc
    except ValueError as exc:  # TOML syntax
        raise ConfigError("catalog", f"cannot parse {path}: {exc}") from exc


def load_platform_file(path: Path) -> PlatformSpec:
    if not path.is_file():
        raise ConfigError("platform", f"file not found: {path}")
    try:
        return PlatformSpec.load(path)
    except (TypeError, ValueError) as exc:
        raise ConfigError("platform", str(exc)) from exc


_TOP_KEYS = {"catalog", "platform", "seed", "scheduler", "slots", "train_slots", "out",
             "predictor", "trace", "workload", "sac", "static", "ga", "sweep"}


def parse_config(doc: dict, base: Path, overrides: dict | None = None) -> RunConfig:
    """Validate a parsed config document; ``overrides`` (flag values) win."""
    doc = dict(doc)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    out_flag = overrides.pop("out", None)
    doc.update(overrides)
    unknown = sorted(set(doc) - _TOP_KEYS)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    if "catalog" not in doc:
        raise ConfigError("catalog", "missing catalog path")
    catalog = load_catalog_file(_resolve(doc["catalog"], base, BUILTIN_CATALOGS, "catalog"))
    if "platform" in doc:
        platform = load_platform_file(_resolve(doc["platform"], base, BUILTIN_PLATFORMS,
                                               "platform"))
    else:
        platform = PlatformSpec()
    if "seed" not in doc:
        raise ConfigError("seed", "a seed is required")
    cfg = RunConfig(catalog=catalog, platform=platform, seed=_number(doc, "seed", int))
    if cfg.seed < 0:
        raise ConfigError("seed", "must be >= 0")

    sched = doc.get("scheduler", "sac")
    if sched not in SCHEDULERS:
        raise ConfigError("scheduler", f"expected one of {list(SCHEDULERS)}, got {sched!r}")
    cfg.scheduler = sched
    for key in ("slots", "train_slots"):
        if key in doc:
            setattr(cfg, key, _number(doc, key, int, positive=True))
    if out_flag is not None:
        cfg.out = Path(out_flag)  # flags are relative to the working directory
    elif "out" in doc:
        cfg.out = _resolve(str(doc["out"]), base, {}, "out")
    pred = doc.get("predictor", False)
    if isinstance(pred, str):
        if pred not in ("on", "off"):
            raise ConfigError("predictor", f"expected on/off, got {pred!r}")
        pred = pred == "on"
    if not isinstance(pred, bool):
        raise ConfigError("predictor", f"expected a boolean, got {pred!r}")
    cfg.predictor = pred
    if doc.get("trace") is not None:
        cfg.trace = _resolve(str(doc["trace"]), base, {}, "trace")

    wl = doc.get("workload", {})
    names = [p.name for p in catalog]
    for key in ("rate", "horizon"):
        if key in wl:
            setattr(cfg, key, _number(wl, key, float, f"workload.{key}", positive=True))
    if "episode_slots" in wl:
        cfg.episode_slots = _number(wl, "episode_slots", int, "workload.episode_slots",
                                    positive=True)
    if "saturate" in wl:
        if not isinstance(wl["saturate"], bool):
            raise ConfigError("workload.saturate", "expected a boolean")
        cfg.saturate = wl["saturate"]
    if "mix" in wl:
        mix = wl["mix"]
        if isinstance(mix, dict):
            missing = [n for n in names if n not in mix]
            if missing or set(mix) - set(names):
                raise ConfigError("workload.mix", f"must give a share for each of {names}")
            mix = [mix[n] for n in names]
        if len(mix) != len(names) or any(float(x) < 0 for x in mix) or \
                abs(sum(float(x) for x in mix) - 1.0) > 1e-9:
            raise ConfigError("workload.mix", "must be non-negative shares summing to 1")
        cfg.mix = tuple(float(x) for x in mix)

    sac = dict(doc.get("sac", {}))
    try:
        cfg.sac = SacConfig(**sac)
    except TypeError as exc:
        bad = next((k for k in sac if k not in SacConfig.__dataclass_fields__), "sac")
        raise ConfigError(f"sac.{bad}" if bad != "sac" else "sac", str(exc)) from exc
    except ValueError as exc:
        raise ConfigError("sac", str(exc)) from exc

    static = doc.get("static", {})
    for name, pair in static.items():
        if name not in names:
            raise ConfigError(f"static.{name}", "not a catalog model")
        if (not isinstance(pair, (list, tuple)) or len(pair) != 2
                or pair[0] not in BATCH_SIZES or pair[1] not in CONCURRENCY):
            raise ConfigError(f"static.{name}", f"expected [b, m_c] on the grid, got {pair!r}")
        cfg.static[name] = (int(pair[0]), int(pair[1]))

    ga = doc.get("ga", {})
    for key in ga:
        if key not in GaSettings.__dataclass_fields__:
            raise ConfigError(f"ga.{key}", "unknown key")
        kind = float if key == "mutation_rate" else int
        setattr(cfg.ga, key, _number(ga, key, kind, f"ga.{key}"))
    if cfg.ga.pop_size < 4 or cfg.ga.pop_size % 2:
        raise ConfigError("ga.pop_size", "must be even and >= 4")

    sw = doc.get("sweep", {})
    if "saturate" in sw:
        if not isinstance(sw["saturate"], bool):
            raise ConfigError("sweep.saturate", "expected a boolean")
        cfg.sweep_saturate = sw["saturate"]
    if "slots" in sw:
        cfg.sweep_slots = _number(sw, "slots", int, "sweep.slots", positive=True)
    for key, grid, attr in (("b", BATCH_SIZES, "sweep_b"), ("m_c", CONCURRENCY, "sweep_mc")):
        if key in sw:
            vals = sw[key]
            if not vals or any(v not in grid for v in vals):
                raise ConfigError(f"sweep.{key}", f"values must be a non-empty subset of {grid}")
            setattr(cfg, attr, tuple(int(v) for v in vals))
    return cfg


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"file not found: {path}")
    try:
        doc = load_toml_text(path.read_text())
    except ValueError as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from exc
    return parse_config(doc, path.parent, overrides)
