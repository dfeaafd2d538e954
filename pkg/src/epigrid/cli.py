"""Command-line entry points: train, eval, transfer, replay.

Flags mirror a config file (JSON or TOML); explicit flags win over file
values. `train` writes its resolved config next to its outputs so `replay`
can re-run it later against the response cache.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

from .episodic_memory import EpisodicMemory
from .gridworld import Task
from .harness import (
    AgentSnapshot,
    EndpointSettings,
    RunConfig,
    emit_outputs,
    evaluate_detailed,
    make_client,
    run_training,
    run_transfer,
    trace_signature,
)


def _load_config_file(path: str) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read()
    if path.endswith(".toml"):
        try:
            import tomllib  # py311+
        except ImportError:
            import tomli as tomllib
        return tomllib.loads(raw.decode("utf-8"))
    return json.loads(raw.decode("utf-8"))


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON or TOML config file; flags override it")
    parser.add_argument("--task", choices=[t.value for t in Task])
    parser.add_argument("--seed", action="append", type=int, dest="seeds",
                        help="training seed; repeat for several")
    parser.add_argument("--frames", type=int)
    parser.add_argument("--encoder", choices=["oracle", "llm"])
    parser.add_argument("--critic", choices=["oracle", "llm"])
    parser.add_argument("--explorer", choices=["scripted", "llm"])
    parser.add_argument("--gamma", type=float)
    parser.add_argument("--split", choices=["no_change", "new_object"])
    parser.add_argument("--n-eval-envs", type=int)
    parser.add_argument("--checkpoint-every", type=int)
    parser.add_argument("--max-steps", type=int)
    parser.add_argument("--endpoint", help="OpenAI-compatible base URL")
    parser.add_argument("--api-key")
    parser.add_argument("--model")
    parser.add_argument("--cache-dir")
    parser.add_argument("--mode", choices=["online", "cache-only"])
    parser.add_argument("--memory-in")
    parser.add_argument("--out")
    parser.add_argument("--ablate-memory", action="store_true", default=None)
    parser.add_argument("--graph-snapshots", action="store_true", default=None)


_CONFIG_KEYS = (
    "task", "seeds", "frames", "encoder", "critic", "explorer", "gamma",
    "split", "n_eval_envs", "checkpoint_every", "max_steps", "endpoint",
    "api_key", "model", "cache_dir", "mode", "memory_in", "out",
    "ablate_memory", "graph_snapshots",
)


def _resolve(args: argparse.Namespace) -> dict:
    values: dict = {}
    if args.config:
        file_values = _load_config_file(args.config)
        unknown = set(file_values) - set(_CONFIG_KEYS)
        if unknown:
            raise SystemExit(f"unknown config keys: {sorted(unknown)}")
        values.update(file_values)
    for key in _CONFIG_KEYS:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            values[key] = flag_value
    return values


def build_run_config(values: dict) -> RunConfig:
    if "task" not in values:
        raise SystemExit("a task is required (--task or config file)")
    endpoint = EndpointSettings(
        url=values.get("endpoint"),
        api_key=values.get("api_key"),
        model=values.get("model") or "gpt-4o-mini",
        cache_dir=values.get("cache_dir"),
        mode=values.get("mode") or "online",
    )
    return RunConfig(
        task=Task(values["task"]),
        seeds=list(values.get("seeds") or [1, 2, 3]),
        frames=values.get("frames", 25_000),
        encoder_backend=values.get("encoder", "oracle"),
        criticality_backend=values.get("critic", "oracle"),
        explorer_backend=values.get("explorer", "scripted"),
        gamma=values.get("gamma", 0.99),
        split=values.get("split", "no_change"),
        n_eval_envs=values.get("n_eval_envs", 100),
        checkpoint_every=values.get("checkpoint_every", 5_000),
        max_steps=values.get("max_steps"),
        endpoint=endpoint,
        out_dir=values.get("out"),
        memory_in=values.get("memory_in"),
        ablate_memory=bool(values.get("ablate_memory") or False),
        emit_graph_snapshots=bool(values.get("graph_snapshots") or False),
    )


def _config_payload(values: dict) -> dict:
    return {key: values[key] for key in _CONFIG_KEYS if key in values and key != "api_key"}


def cmd_train(args: argparse.Namespace) -> int:
    values = _resolve(args)
    config = build_run_config(values)
    report = run_training(config)
    out_dir = config.out_dir or "runs/latest"
    emit_outputs(report, out_dir)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(_config_payload(values), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"task={report.task} split={report.split} "
          f"final={report.final_mean:.3f}"
          + (f" +/- {report.final_std:.3f}" if report.final_std is not None else "")
          + f" frames={report.frames_budget} out={out_dir}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    values = _resolve(args)
    config = build_run_config(values)
    if values.get("memory_in"):
        memory = EpisodicMemory.load(values["memory_in"])
    else:
        memory = EpisodicMemory(task=config.task.value, gamma=config.gamma)
    snapshot = AgentSnapshot(
        memory=memory,
        encoder_backend=config.encoder_backend,
        criticality_backend=config.criticality_backend,
        explorer_backend=config.explorer_backend,
        client=make_client(config),
    )
    result = evaluate_detailed(snapshot, config.task, config.split,
                               config.n_eval_envs, max_steps=config.max_steps)
    payload = {
        "task": config.task.value,
        "split": config.split,
        "success_rate": result.success_rate,
        "n_envs": result.n_envs,
        "invocation": result.invocation,
        "memory_entries": len(memory),
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    if config.out_dir:
        os.makedirs(config.out_dir, exist_ok=True)
        with open(os.path.join(config.out_dir, "eval.json"), "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def cmd_transfer(args: argparse.Namespace) -> int:
    values = _resolve(args)
    config = build_run_config(values)
    if not values.get("memory_in"):
        raise SystemExit("transfer needs --memory-in pointing at a source memory file")
    report = run_transfer(config, values["memory_in"])
    print(json.dumps(report, indent=2, sort_keys=True))
    if config.out_dir:
        os.makedirs(config.out_dir, exist_ok=True)
        with open(os.path.join(config.out_dir, "transfer.json"), "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    run_dir = args.run_dir
    config_path = os.path.join(run_dir, "config.json")
    if not os.path.exists(config_path):
        raise SystemExit(f"no config.json in {run_dir}; was this directory produced by train?")
    values = _load_config_file(config_path)
    values["mode"] = "cache-only"
    config = build_run_config(values)
    report = run_training(config)
    mismatches = []
    for seed, records in report.traces_by_seed.items():
        path = os.path.join(run_dir, "traces", f"seed{seed}.jsonl")
        with open(path, "r", encoding="utf-8") as fh:
            recorded = [json.loads(line) for line in fh if line.strip()]
        if trace_signature(recorded) != trace_signature(records):
            mismatches.append(seed)
    if mismatches:
        print(f"replay MISMATCH for seeds {mismatches}")
        return 1
    print(f"replay ok: {len(report.traces_by_seed)} seed trace(s) identical")
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="epigrid",
        description="episodic-memory gridworld agent: training, evaluation, transfer, replay",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, handler in (("train", cmd_train), ("eval", cmd_eval),
                          ("transfer", cmd_transfer)):
        sp = sub.add_parser(name)
        _add_common_flags(sp)
        sp.set_defaults(handler=handler)
    replay = sub.add_parser("replay")
    replay.add_argument("run_dir", help="output directory of a previous train run")
    replay.set_defaults(handler=cmd_replay)
    args = parser.parse_args(argv)
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
