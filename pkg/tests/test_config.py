from pathlib import Path

import pytest

from edgesched.config import ConfigError, load_config, parse_config

ROOT = Path(__file__).resolve().parents[1]


def test_shipped_configs_load():
    d = load_config(ROOT / "configs" / "default.toml")
    assert len(d.catalog) == 6 and d.platform.mem_capacity == 8192.0
    assert set(d.static) == {p.name for p in d.catalog}
    t = load_config(ROOT / "configs" / "toy.toml")
    assert t.saturate and t.static == {"toy": (8, 2)}
    assert t.out == (ROOT / "configs" / "../runs/toy")


def test_overrides_win_and_out_flag_is_cwd_relative(tmp_path):
    cfg = parse_config({"catalog": "builtin:toy", "seed": 1, "out": "o"}, tmp_path,
                       {"seed": 7, "scheduler": "edf", "out": "x", "slots": None})
    assert cfg.seed == 7 and cfg.scheduler == "edf" and cfg.out == Path("x")
    cfg = parse_config({"catalog": "builtin:toy", "seed": 1, "out": "o"}, tmp_path)
    assert cfg.out == tmp_path / "o"


@pytest.mark.parametrize("doc,field", [
    ({"seed": 0}, "catalog"),
    ({"catalog": "nope.toml", "seed": 0}, "catalog"),
    ({"catalog": "builtin:toy"}, "seed"),
    ({"catalog": "builtin:toy", "seed": -1}, "seed"),
    ({"catalog": "builtin:toy", "seed": 0, "scheduler": "fifo"}, "scheduler"),
    ({"catalog": "builtin:toy", "seed": 0, "bogus": 1}, "bogus"),
    ({"catalog": "builtin:toy", "seed": 0, "workload": {"rate": 0}}, "workload.rate"),
    ({"catalog": "builtin:toy", "seed": 0, "workload": {"mix": [0.5]}}, "workload.mix"),
    ({"catalog": "builtin:toy", "seed": 0, "sac": {"nope": 1}}, "sac.nope"),
    ({"catalog": "builtin:toy", "seed": 0, "sac": {"gamma": 2.0}}, "sac"),
    ({"catalog": "builtin:toy", "seed": 0, "static": {"toy": [3, 1]}}, "static.toy"),
    ({"catalog": "builtin:toy", "seed": 0, "static": {"x": [1, 1]}}, "static.x"),
    ({"catalog": "builtin:toy", "seed": 0, "ga": {"pop_size": 5}}, "ga.pop_size"),
    ({"catalog": "builtin:toy", "seed": 0, "sweep": {"b": [3]}}, "sweep.b"),
    ({"catalog": "builtin:toy", "seed": 0, "predictor": "maybe"}, "predictor"),
])
def test_invalid_configs_name_the_field(tmp_path, doc, field):
    with pytest.raises(ConfigError) as info:
        parse_config(doc, tmp_path)
    assert info.value.field == field


def test_bad_catalog_file(tmp_path):
    (tmp_path / "c.toml").write_text("[[model]]\nname = 'x'\n")
    with pytest.raises(ConfigError, match="'x'") as info:
        parse_config({"catalog": "c.toml", "seed": 0}, tmp_path)
    assert info.value.field == "catalog"


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_config(tmp_path / "none.toml")
    assert info.value.field == "config"
