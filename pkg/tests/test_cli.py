import json
import subprocess
import sys

import pytest

from edgesched.cli import main

TOY = """\
catalog = "builtin:toy"
platform = "builtin:toy"
seed = 0
train_slots = 40
slots = 16

[workload]
saturate = true
episode_slots = 16

[sac]
hidden = [16]
batch_size = 8

[static]
toy = [8, 2]

[ga]
generations = 2
pop_size = 4
slots = 4

[sweep]
slots = 2
b = [4, 8]
m_c = [1, 2]
"""


@pytest.fixture
def toy_cfg(tmp_path):
    p = tmp_path / "toy.toml"
    p.write_text(TOY)
    return p


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_train_then_evaluate(toy_cfg, tmp_path, capsys):
    out = tmp_path / "train"
    assert main(["train", "--config", str(toy_cfg), "--out", str(out)]) == 0
    for name in ("train_log.jsonl", "metrics.jsonl", "checkpoint.json", "summary.json"):
        assert (out / name).is_file()
    log = [json.loads(l) for l in (out / "train_log.jsonl").read_text().splitlines()]
    assert len(log) == 40 and {"slot", "reward", "q_loss", "alpha"} <= set(log[0])
    ev = tmp_path / "eval"
    assert main(["evaluate", "--config", str(toy_cfg), "--checkpoint",
                 str(out / "checkpoint.json"), "--out", str(ev)]) == 0
    summary = json.loads((ev / "summary.json").read_text())
    assert summary["scheduler"] == "sac" and summary["records"] == 16


@pytest.mark.parametrize("sched", ["static", "edf", "ga"])
def test_evaluate_baselines(toy_cfg, tmp_path, sched):
    out = tmp_path / sched
    assert main(["evaluate", "--config", str(toy_cfg), "--scheduler", sched,
                 "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["scheduler"] == sched
    if sched == "ga":
        assert len(summary["ga_history"]) == 3


def test_sweep_outputs(toy_cfg, tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(toy_cfg), "--out", str(out)]) == 0
    rows = (out / "sweep.jsonl").read_text().splitlines()
    assert len(rows) == 4
    assert json.loads((out / "sweep_summary.json").read_text())["best"] == {"toy": [8, 2]}


def test_replay_with_given_trace(tmp_path, capsys):
    cfg = tmp_path / "d.toml"
    cfg.write_text('catalog = "builtin:default"\nseed = 3\nslots = 30\nscheduler = "edf"\n'
                   '[workload]\nhorizon = 2.0\n')
    first = tmp_path / "r1"
    assert main(["replay", "--config", str(cfg), "--out", str(first)]) == 0
    events = (first / "events.jsonl").read_text().splitlines()
    assert events and json.loads(events[0])["event_kind"] in ("complete", "overflow")
    second = tmp_path / "r2"
    assert main(["replay", "--config", str(cfg), "--out", str(second),
                 "--trace", str(first / "trace.jsonl")]) == 0
    assert (first / "metrics.jsonl").read_bytes() == (second / "metrics.jsonl").read_bytes()


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("seed = 0\n")
    assert main(["evaluate", "--config", str(cfg)]) == 2
    err = _err(capsys)
    assert err["field"] == "catalog" and err["error"] == "config"


def test_sac_evaluate_needs_checkpoint(toy_cfg, tmp_path, capsys):
    assert main(["evaluate", "--config", str(toy_cfg), "--out", str(tmp_path / "e")]) == 2
    assert _err(capsys)["field"] == "checkpoint"


def test_checkpoint_dimension_mismatch(toy_cfg, tmp_path, capsys):
    out = tmp_path / "t"
    assert main(["train", "--config", str(toy_cfg), "--slots", "10", "--out", str(out)]) == 0
    other = tmp_path / "d.toml"
    other.write_text('catalog = "builtin:default"\nseed = 0\nslots = 4\n')
    code = main(["evaluate", "--config", str(other), "--checkpoint",
                 str(out / "checkpoint.json"), "--out", str(tmp_path / "e")])
    assert code == 3
    err = _err(capsys)
    assert err["error"] == "checkpoint" and "dimension mismatch" in err["message"]


def test_garbage_checkpoint(toy_cfg, tmp_path, capsys):
    bad = tmp_path / "ck.json"
    bad.write_text("{}")
    assert main(["evaluate", "--config", str(toy_cfg), "--checkpoint", str(bad),
                 "--out", str(tmp_path / "e")]) == 3


def test_console_entry_point(toy_cfg, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "edgesched.cli", "sweep", "--config",
                           str(toy_cfg), "--out", str(tmp_path / "s")],
                          capture_output=True, text=True, check=True)
    assert json.loads(proc.stdout)["best"] == {"toy": [8, 2]}
