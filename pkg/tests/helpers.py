"""Shared builders for the test suite."""

from edgesched.config import DATA_DIR, load_catalog_file, load_platform_file
from edgesched.env import EnvConfig
from edgesched.workload import default_catalog


def toy_env_config(**kw) -> EnvConfig:
    cat = load_catalog_file(DATA_DIR / "toy_catalog.toml")
    spec = load_platform_file(DATA_DIR / "toy_platform.toml")
    base = dict(catalog=tuple(cat), spec=spec, saturate=True, episode_slots=256, seed=0)
    base.update(kw)
    return EnvConfig(**base)


def default_env_config(**kw) -> EnvConfig:
    base = dict(catalog=tuple(default_catalog()), seed=0, episode_slots=256)
    base.update(kw)
    return EnvConfig(**base)
