"""Command-line entry point: ``edgesched {train,evaluate,sweep,replay}``.

Every command is a pure function of (config, checkpoint, seed): rerunning
with the same inputs rewrites byte-identical output files. Failures print
one JSON line on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from edgesched.baselines import (EVAL_EPISODE, EdfPolicy, StaticPolicy, ga_optimize,
                                 run_policy, static_sweep)
from edgesched.config import ConfigError, RunConfig, load_config
from edgesched.env import EdgeEnv
from edgesched.interference import LatencyPredictor
from edgesched.profiler import aggregate, write_records
from edgesched.sac import SacScheduler, train_episode
from edgesched.workload import generate_arrivals, read_trace, write_trace

EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3


class CheckpointError(ValueError):
    pass


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _write_lines(path: Path, rows) -> None:
    with path.open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _predictor_for(env: EdgeEnv, seed: int) -> LatencyPredictor:
    n = len(env.predictor_features(env.catalog[0].name, 1, 1))
    return LatencyPredictor(n, seed=seed)


def save_checkpoint(path: Path, sched: SacScheduler) -> None:
    bundle = sched.to_dict()
    bundle["predictor"] = sched.predictor.to_dict() if sched.predictor is not None else None
    path.write_text(json.dumps(bundle, sort_keys=True) + "\n")


def load_checkpoint(path, env: EdgeEnv, use_predictor: bool) -> SacScheduler:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("checkpoint", f"file not found: {path}")
    try:
        bundle = json.loads(path.read_text())
        sched = SacScheduler.from_dict(bundle)
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    try:
        sched.check_env(env)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
    if use_predictor:
        saved = bundle.get("predictor")
        sched.predictor = (LatencyPredictor.from_dict(saved) if saved
                           else _predictor_for(env, sched.seed))
    return sched


def _summary(cfg: RunConfig, records, **extra) -> dict:
    out = aggregate(records).report()
    out.update({"scheduler": cfg.scheduler, "seed": cfg.seed, "slots": cfg.slots})
    out.update(extra)
    return out


# -- commands ------------------------------------------------------------------

def cmd_train(cfg: RunConfig, checkpoint: str | None = None) -> dict:
    if cfg.scheduler != "sac":
        raise ConfigError("scheduler", "train needs scheduler = sac")
    env = EdgeEnv(cfg.env_config())
    if checkpoint:
        sched = load_checkpoint(checkpoint, env, cfg.predictor)
    else:
        sched = SacScheduler([p.name for p in env.catalog], env.state_dim, cfg.sac,
                             seed=cfg.seed)
        if cfg.predictor:
            sched.predictor = _predictor_for(env, cfg.seed)
    cfg.out.mkdir(parents=True, exist_ok=True)
    log, records = [], []

    def keep(env_, results):
        for res in results:
            res.record.slot_index = sched.steps
            records.append(res.record)

    remaining = cfg.train_slots
    while remaining > 0:
        episode = sched.episodes
        stats = train_episode(sched, env, steps=min(cfg.episode_slots, remaining),
                              on_results=keep)
        for entry in stats.log:
            entry["episode"] = episode
        log.extend(stats.log)
        # an episode may end early when its trace runs dry
        remaining -= max(1, len(stats.log))
    _write_lines(cfg.out / "train_log.jsonl", log)
    with (cfg.out / "metrics.jsonl").open("w") as fh:
        write_records(records, fh)
    save_checkpoint(cfg.out / "checkpoint.json", sched)
    summary = _summary(cfg, records, steps=sched.steps, episodes=sched.episodes,
                       alpha={m: a.alpha for m, a in sched.agents.items()})
    summary["slots"] = len(log)
    _dump_json(cfg.out / "summary.json", summary)
    return summary


def build_policy(cfg: RunConfig, env: EdgeEnv, checkpoint: str | None):
    """Scheduler object for evaluation plus summary extras."""
    if cfg.scheduler == "sac":
        if not checkpoint:
            raise ConfigError("checkpoint", "scheduler sac needs --checkpoint")
        sched = load_checkpoint(checkpoint, env, cfg.predictor)
        sched.mode = "eval"
        return sched, {}
    if cfg.scheduler == "static":
        missing = [p.name for p in env.catalog if p.name not in cfg.static]
        if missing:
            raise ConfigError("static", f"no (b, m_c) for models {missing}")
        return StaticPolicy(cfg.static), {"static": {k: list(v) for k, v in cfg.static.items()}}
    if cfg.scheduler == "edf":
        return EdfPolicy(), {}
    ga = cfg.ga
    res = ga_optimize(cfg.env_config(), ga.generations, ga.pop_size, seed=cfg.seed,
                      slots=ga.slots, mutation_rate=ga.mutation_rate, tournament=ga.tournament)
    return StaticPolicy(res.best), {"ga_best": {k: list(v) for k, v in res.best.items()},
                                    "ga_fitness": res.best_fitness, "ga_history": res.history}


def cmd_evaluate(cfg: RunConfig, checkpoint: str | None = None) -> dict:
    env = EdgeEnv(cfg.env_config())
    policy, extra = build_policy(cfg, env, checkpoint)
    records = run_policy(env, policy, cfg.slots)
    cfg.out.mkdir(parents=True, exist_ok=True)
    with (cfg.out / "metrics.jsonl").open("w") as fh:
        write_records(records, fh)
    summary = _summary(cfg, records, **extra)
    _dump_json(cfg.out / "summary.json", summary)
    return summary


def cmd_sweep(cfg: RunConfig, checkpoint: str | None = None) -> dict:
    env_cfg = replace(cfg.env_config(), saturate=cfg.sweep_saturate)
    result = static_sweep(env_cfg, cfg.sweep_slots, cfg.sweep_b, cfg.sweep_mc)
    cfg.out.mkdir(parents=True, exist_ok=True)
    with (cfg.out / "sweep.jsonl").open("w") as fh:
        result.write(fh)
    summary = {"best": {k: list(v) for k, v in result.best.items()},
               "best_utility": result.best_utility, "records": len(result.table),
               "seed": cfg.seed, "slots": cfg.sweep_slots}
    _dump_json(cfg.out / "sweep_summary.json", summary)
    return summary


def cmd_replay(cfg: RunConfig, checkpoint: str | None = None) -> dict:
    """Run the configured scheduler over one fixed trace with an event log."""
    env_cfg = replace(cfg.env_config(), episode_slots=cfg.slots, saturate=False)
    cfg.out.mkdir(parents=True, exist_ok=True)
    if cfg.trace is not None:
        if not cfg.trace.is_file():
            raise ConfigError("trace", f"file not found: {cfg.trace}")
        with cfg.trace.open() as fh:
            try:
                trace = read_trace(fh, cfg.catalog)
            except (ValueError, KeyError) as exc:
                raise ConfigError("trace", str(exc)) from exc
    else:
        trace = generate_arrivals(env_cfg.arrival_process(EVAL_EPISODE), cfg.catalog)
    with (cfg.out / "trace.jsonl").open("w") as fh:
        write_trace(trace, fh)
    env = EdgeEnv(env_cfg, log_events=True)
    policy, extra = build_policy(cfg, env, checkpoint)
    env.reset(EVAL_EPISODE, trace=trace)
    records = []
    while not env.done and env.begin_slot():
        policy.plan_slot(env)
        records.extend(res.record for res in env.execute())
    with (cfg.out / "events.jsonl").open("w") as fh:
        env.events.write(fh)
    with (cfg.out / "metrics.jsonl").open("w") as fh:
        write_records(records, fh)
    if not records:
        raise ConfigError("trace", "trace produced no scheduling slots")
    summary = _summary(cfg, records, requests_in_trace=len(trace), **extra)
    _dump_json(cfg.out / "summary.json", summary)
    return summary


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "sweep": cmd_sweep,
            "replay": cmd_replay}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgesched",
                                     description="Edge inference scheduling simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run config (TOML)")
        p.add_argument("--seed", type=int)
        p.add_argument("--scheduler", choices=["sac", "static", "edf", "ga"])
        p.add_argument("--slots", type=int,
                       help="training slots for train, evaluation slots otherwise")
        p.add_argument("--checkpoint")
        p.add_argument("--out")
        p.add_argument("--predictor", choices=["on", "off"])
        if name == "replay":
            p.add_argument("--trace")
    return parser


def _fail(kind: str, field: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "field": field, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "scheduler": args.scheduler, "out": args.out,
                 "predictor": args.predictor}
    overrides["train_slots" if args.command == "train" else "slots"] = args.slots
    if getattr(args, "trace", None):
        overrides["trace"] = str(Path(args.trace).resolve())
    try:
        cfg = load_config(args.config, overrides)
        summary = COMMANDS[args.command](cfg, args.checkpoint)
    except ConfigError as exc:
        return _fail("config", exc.field, exc.message, EXIT_CONFIG)
    except CheckpointError as exc:
        return _fail("checkpoint", "checkpoint", str(exc), EXIT_CHECKPOINT)
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
