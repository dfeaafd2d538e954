"""Experiment orchestration: seeded training and evaluation loops.

A training run alternates episodes of encode/decide/step/record with
end-of-episode commits into episodic memory, evaluates greedy snapshots at
frame checkpoints, and writes learning curves, an invocation-rate table,
decision traces, and memory files. Evaluation seeds live in a reserved
range so they can never collide with training layouts.
"""

from __future__ import annotations

import csv
import io
import json
import os
import random
import statistics
import time
from dataclasses import dataclass, field
from typing import Optional

from . import prompts
from .controller import (
    Controller,
    DecisionTrace,
    LLMCriticality,
    LLMExplorer,
    OracleCriticality,
    ScriptedExplorer,
    SOURCE_EPISODIC,
    SOURCE_LLM,
)
from .encoder import (
    EncodeError,
    EncoderInput,
    LLMEncoderBackend,
    OracleEncoderBackend,
    StateKey,
    canonicalize,
    encode,
    oracle_encode,
)
from .episodic_memory import CommitStats, EpisodeBuffer, EpisodicMemory
from .gridworld import (
    Environment,
    EntityKind,
    Task,
    new_env,
    sample_task_spec,
)
from .llm_client import LLMClient
from .world_graph import (
    GraphParseError,
    GroundTruthGraphUpdater,
    WorldGraph,
    build_graph_prompt,
    graph_to_json,
    init_graph,
    parse_graph_output,
)

EVAL_SEED_BASE = 1_000_000_000
_SPLIT_SEED_OFFSET = {"no_change": 0, "new_object": 10_000_000}

ORACLE_BACKENDS = ("oracle", "scripted")


class ConfigError(ValueError):
    pass


@dataclass
class EndpointSettings:
    url: Optional[str] = None
    api_key: Optional[str] = None
    model: str = "gpt-4o-mini"
    cache_dir: Optional[str] = None
    mode: str = "online"


@dataclass
class RunConfig:
    task: Task
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    frames: int = 25_000
    encoder_backend: str = "oracle"          # oracle | llm
    criticality_backend: str = "oracle"      # oracle | llm
    explorer_backend: str = "scripted"       # scripted | llm
    gamma: float = 0.99
    split: str = "no_change"
    n_eval_envs: int = 100
    checkpoint_every: int = 5_000
    max_steps: Optional[int] = None
    endpoint: EndpointSettings = field(default_factory=EndpointSettings)
    out_dir: Optional[str] = None
    memory_in: Optional[str] = None
    ablate_memory: bool = False
    emit_graph_snapshots: bool = False
    keep_traces: bool = True
    train_epsilon: float = 0.1

    def needs_llm(self) -> bool:
        return "llm" in (self.encoder_backend, self.criticality_backend, self.explorer_backend)

    def validate(self) -> None:
        if self.frames <= 0:
            raise ConfigError("frame budget must be positive")
        if not self.seeds:
            raise ConfigError("at least one training seed is required")
        if self.split not in ("no_change", "new_object"):
            raise ConfigError(f"unknown split {self.split!r}")
        if self.encoder_backend not in ("oracle", "llm"):
            raise ConfigError(f"unknown encoder backend {self.encoder_backend!r}")
        if self.criticality_backend not in ("oracle", "llm"):
            raise ConfigError(f"unknown criticality backend {self.criticality_backend!r}")
        if self.explorer_backend not in ("scripted", "llm"):
            raise ConfigError(f"unknown explorer backend {self.explorer_backend!r}")
        if self.n_eval_envs < 1:
            raise ConfigError("n_eval_envs must be at least 1")
        if self.checkpoint_every <= 0:
            raise ConfigError("checkpoint_every must be positive")
        if self.needs_llm():
            if self.endpoint.mode == "online" and not self.endpoint.url:
                raise ConfigError("llm backends need an endpoint URL (or cache-only mode)")
            if self.endpoint.mode == "cache-only" and not self.endpoint.cache_dir:
                raise ConfigError("cache-only mode needs a cache directory")


def make_client(config: RunConfig, transport=None) -> Optional[LLMClient]:
    if not config.needs_llm():
        return None
    ep = config.endpoint
    return LLMClient(
        model=ep.model,
        endpoint=ep.url,
        api_key=ep.api_key,
        cache_dir=ep.cache_dir,
        mode=ep.mode,
        transport=transport,
    )


def game_description() -> str:
    return prompts.load_template("env_description").strip()


@dataclass
class AgentSnapshot:
    """Everything evaluation needs: the memory plus backend choices."""

    memory: EpisodicMemory
    encoder_backend: str = "oracle"
    criticality_backend: str = "oracle"
    explorer_backend: str = "scripted"
    client: Optional[LLMClient] = None


@dataclass
class EpisodeOutcome:
    steps: int
    success: bool
    reward: float
    traces: list[DecisionTrace]
    commit: Optional[CommitStats]
    counters: dict[str, int]
    key_pickup_step: Optional[int]
    unlock_step: Optional[int]
    graph: WorldGraph
    graph_snapshots: list[str]


_NEUTRAL_OBSTACLES = ("no", "no", "no")


def _neutral_key(observation) -> StateKey:
    return StateKey(
        target_directions=(),
        carrying=observation.carrying is not None,
        obstacles=_NEUTRAL_OBSTACLES,
        target_one_step_forward=False,
    )


def run_episode(env: Environment, memory: EpisodicMemory, *,
                gamma: float,
                encoder_backend: str = "oracle",
                criticality_backend: str = "oracle",
                explorer_backend: str = "scripted",
                client: Optional[LLMClient] = None,
                commit: bool = True,
                frame_budget: Optional[int] = None,
                transcript_path: Optional[str] = None,
                agreement: Optional[dict] = None,
                collect_graph_snapshots: bool = False,
                explore_rng: Optional[random.Random] = None,
                epsilon: float = 0.0) -> EpisodeOutcome:
    """One episode of the full control loop against a fresh environment."""
    observation = env.reset()
    graph = init_graph()
    updater = GroundTruthGraphUpdater()
    description = game_description()
    counters: dict[str, int] = {
        "encode_errors": 0,
        "graph_parse_errors": 0,
        "graph_repairs": 0,
        "criticality_parse_failures": 0,
        "explorer_fallbacks": 0,
    }

    if encoder_backend == "llm":
        enc = LLMEncoderBackend(client, transcript_path=transcript_path)
    else:
        enc = OracleEncoderBackend(env)
    if criticality_backend == "llm":
        crit = LLMCriticality(client, description, env.mission)
    else:
        crit = OracleCriticality()
    scripted = ScriptedExplorer(env.mission, rng=explore_rng)
    if explorer_backend == "llm":
        explorer = LLMExplorer(client, description, env.mission)
        controller = Controller(memory, crit, explorer, scripted_fallback=scripted,
                                epsilon=epsilon, rng=explore_rng)
    else:
        controller = Controller(memory, crit, scripted,
                                epsilon=epsilon, rng=explore_rng)
    use_llm_graph = explorer_backend == "llm"

    buffer = EpisodeBuffer()
    traces: list[DecisionTrace] = []
    snapshots: list[str] = []
    prev_truth = env.ground_truth()
    prev_obs_text = observation.body_text()
    steps = 0
    total_reward = 0.0
    key_pickup_step: Optional[int] = None
    unlock_step: Optional[int] = None
    target_key = (env.spec.target[0], EntityKind.KEY)

    while not env.done and (frame_budget is None or steps < frame_budget):
        encoder_input = EncoderInput(description, prev_obs_text, env.mission)
        key: Optional[StateKey] = None
        try:
            key = encode(encoder_input, enc)
        except EncodeError:
            counters["encode_errors"] += 1
        policy_key = key if key is not None else _neutral_key(observation)

        if agreement is not None and encoder_backend == "llm" and key is not None:
            _update_agreement(agreement, key, oracle_encode(env.ground_truth(), env.spec))

        action, trace = controller.decide(observation, policy_key, graph)
        if key is None:
            trace.note = "encode_error"
        result = env.step(action)
        steps += 1
        total_reward += result.reward
        if key is not None:
            buffer.record(canonicalize(key), action, result.reward)
        traces.append(trace)

        if env.spec.task is Task.UNLOCK_LOCAL:
            if key_pickup_step is None and env.carrying == target_key:
                key_pickup_step = steps
            if unlock_step is None and result.success:
                unlock_step = steps

        new_truth = env.ground_truth()
        if use_llm_graph:
            prompt = build_graph_prompt(graph, prev_obs_text, action,
                                        result.observation.body_text())
            from .llm_client import ChatRequest
            reply = client.complete(ChatRequest(model=client.model,
                                                messages=(("user", prompt),)))
            try:
                graph = parse_graph_output(reply, graph)
            except GraphParseError:
                counters["graph_parse_errors"] += 1
        else:
            graph = updater.update(graph, prev_truth, action, new_truth)
        if collect_graph_snapshots:
            snapshots.append(graph_to_json(graph))

        prev_truth = new_truth
        observation = result.observation
        prev_obs_text = observation.body_text()

    buffer.seal()
    commit_stats = memory.commit(buffer, gamma) if commit else None
    counters["graph_repairs"] = graph.repair_count
    counters["criticality_parse_failures"] = getattr(crit, "parse_failures", 0)
    counters["explorer_fallbacks"] = controller.exploration_fallbacks
    if encoder_backend == "llm":
        counters["encoder_parse_failures"] = enc.parse_failures
    return EpisodeOutcome(
        steps=steps,
        success=env.success,
        reward=total_reward,
        traces=traces,
        commit=commit_stats,
        counters=counters,
        key_pickup_step=key_pickup_step,
        unlock_step=unlock_step,
        graph=graph,
        graph_snapshots=snapshots,
    )


def _update_agreement(agreement: dict, key: StateKey, oracle_key: StateKey) -> None:
    agreement["total"] = agreement.get("total", 0) + 1
    for name, got, want in (
        ("target_directions", key.target_directions, oracle_key.target_directions),
        ("carrying", key.carrying, oracle_key.carrying),
        ("obstacles", key.obstacles, oracle_key.obstacles),
        ("target_one_step_forward", key.target_one_step_forward,
         oracle_key.target_one_step_forward),
    ):
        if got == want:
            agreement[name] = agreement.get(name, 0) + 1


def _invocation_fractions(traces: list[DecisionTrace]) -> dict[str, float]:
    total = len(traces)
    if total == 0:
        return {"llm_policy_fraction": 0.0, "exploration_fraction": 0.0,
                "episodic_fraction": 0.0, "decision_steps": 0}
    llm = sum(1 for t in traces if t.source == SOURCE_LLM)
    episodic = sum(1 for t in traces if t.source == SOURCE_EPISODIC)
    return {
        "llm_policy_fraction": llm / total,
        "exploration_fraction": (total - episodic) / total,
        "episodic_fraction": episodic / total,
        "decision_steps": total,
    }


def eval_env_seed(split: str, index: int) -> int:
    return EVAL_SEED_BASE + _SPLIT_SEED_OFFSET[split] + index


def build_eval_env(task: Task, split: str, index: int,
                   max_steps: Optional[int] = None) -> Environment:
    spec_rng = random.Random(f"eval-spec:{task.value}:{split}:{index}")
    spec = sample_task_spec(task, spec_rng, split=split, max_steps=max_steps)
    return new_env(spec, eval_env_seed(split, index))


@dataclass
class EvalResult:
    success_rate: float
    successes: int
    n_envs: int
    invocation: dict
    mean_steps: float


def evaluate_detailed(snapshot: AgentSnapshot, task: Task, split: str,
                      n_envs: int, max_steps: Optional[int] = None) -> EvalResult:
    """Greedy rollout over the reserved evaluation seeds; no memory writes."""
    if n_envs < 1:
        raise ConfigError("n_envs must be at least 1")
    successes = 0
    steps = 0
    traces: list[DecisionTrace] = []
    for index in range(n_envs):
        env = build_eval_env(task, split, index, max_steps=max_steps)
        outcome = run_episode(
            env, snapshot.memory, gamma=snapshot.memory.gamma,
            encoder_backend=snapshot.encoder_backend,
            criticality_backend=snapshot.criticality_backend,
            explorer_backend=snapshot.explorer_backend,
            client=snapshot.client, commit=False,
        )
        successes += int(outcome.success)
        steps += outcome.steps
        traces.extend(outcome.traces)
    return EvalResult(
        success_rate=successes / n_envs,
        successes=successes,
        n_envs=n_envs,
        invocation=_invocation_fractions(traces),
        mean_steps=steps / n_envs,
    )


def evaluate(snapshot: AgentSnapshot, task: Task, split: str, n_envs: int = 100,
             max_steps: Optional[int] = None) -> float:
    return evaluate_detailed(snapshot, task, split, n_envs, max_steps).success_rate


@dataclass
class SeedReport:
    seed: int
    frames: int
    episodes: int
    final_success: float
    checkpoints: list[dict]
    invocation: dict
    counters: dict
    commit_totals: dict
    unlock_ordering: dict
    train_seed_span: dict


@dataclass
class RunReport:
    task: str
    split: str
    gamma: float
    frames_budget: int
    seeds: list[int]
    n_eval_envs: int
    checkpoint_every: int
    backends: dict
    ablated: bool
    memory_source: Optional[str]
    per_seed: list[SeedReport]
    final_mean: float
    final_std: Optional[float]
    encoder_agreement: Optional[dict]
    eval_seed_base: int
    wall_clock: float
    traces_by_seed: dict[int, list[dict]] = field(default_factory=dict)
    memories_by_seed: dict[int, EpisodicMemory] = field(default_factory=dict)
    graph_snapshots_by_seed: dict[int, list[str]] = field(default_factory=dict)


def _trace_record(episode: int, trace: DecisionTrace) -> dict:
    return {
        "episode": episode,
        "step": trace.step,
        "mode": trace.mode,
        "critical": trace.critical,
        "key": trace.key,
        "action": trace.action,
        "source": trace.source,
        "latency": trace.latency,
        "note": trace.note,
    }


def trace_signature(records: list[dict]) -> list[dict]:
    """Trace projection for replay comparison; latency is provenance only."""
    return [{k: v for k, v in r.items() if k != "latency"} for r in records]


def run_training(config: RunConfig, transport=None) -> RunReport:
    config.validate()
    started = time.perf_counter()
    client = make_client(config, transport=transport)
    agreement: Optional[dict] = {} if config.encoder_backend == "llm" else None

    per_seed: list[SeedReport] = []
    traces_by_seed: dict[int, list[dict]] = {}
    memories_by_seed: dict[int, EpisodicMemory] = {}
    graphs_by_seed: dict[int, list[str]] = {}
    memory_source = None

    for seed in config.seeds:
        memory = EpisodicMemory(task=config.task.value, gamma=config.gamma, created_at=0.0)
        if config.memory_in:
            foreign = EpisodicMemory.load(config.memory_in)
            memory.import_foreign(foreign)
            memory_source = foreign.task
        env_seed_rng = random.Random(f"train-envs:{config.task.value}:{seed}")
        snapshot = AgentSnapshot(
            memory=memory,
            encoder_backend=config.encoder_backend,
            criticality_backend=config.criticality_backend,
            explorer_backend=config.explorer_backend,
            client=client,
        )

        frames = 0
        episodes = 0
        next_checkpoint = config.checkpoint_every
        checkpoints: list[dict] = []
        seed_traces: list[dict] = []
        seed_graphs: list[str] = []
        counters: dict[str, int] = {}
        commit_totals = {"inserted": 0, "raised": 0, "unchanged": 0}
        all_traces: list[DecisionTrace] = []
        unlock_ordered = 0
        unlock_successes = 0
        min_env_seed, max_env_seed = None, None

        while frames < config.frames:
            spec_rng = random.Random(f"train-spec:{config.task.value}:{seed}:{episodes}")
            spec = sample_task_spec(config.task, spec_rng, split="no_change",
                                    max_steps=config.max_steps)
            env_seed = env_seed_rng.randrange(0, EVAL_SEED_BASE)
            min_env_seed = env_seed if min_env_seed is None else min(min_env_seed, env_seed)
            max_env_seed = env_seed if max_env_seed is None else max(max_env_seed, env_seed)
            env = new_env(spec, env_seed)
            outcome = run_episode(
                env, memory, gamma=config.gamma,
                encoder_backend=config.encoder_backend,
                criticality_backend=config.criticality_backend,
                explorer_backend=config.explorer_backend,
                client=client,
                commit=not config.ablate_memory,
                frame_budget=config.frames - frames,
                agreement=agreement,
                collect_graph_snapshots=config.emit_graph_snapshots,
                explore_rng=random.Random(f"explore:{config.task.value}:{seed}:{episodes}"),
                epsilon=config.train_epsilon,
            )
            if config.keep_traces:
                seed_traces.extend(_trace_record(episodes, t) for t in outcome.traces)
            if config.emit_graph_snapshots:
                seed_graphs.extend(outcome.graph_snapshots)
            all_traces.extend(outcome.traces)
            for name, value in outcome.counters.items():
                counters[name] = counters.get(name, 0) + value
            if outcome.commit is not None:
                commit_totals["inserted"] += outcome.commit.inserted
                commit_totals["raised"] += outcome.commit.raised
                commit_totals["unchanged"] += outcome.commit.unchanged
            if outcome.success and env.spec.task is Task.UNLOCK_LOCAL:
                unlock_successes += 1
                if outcome.key_pickup_step is not None and outcome.unlock_step is not None \
                        and outcome.key_pickup_step < outcome.unlock_step:
                    unlock_ordered += 1
            frames += outcome.steps
            episodes += 1
            while next_checkpoint <= frames and next_checkpoint <= config.frames:
                rate = evaluate(snapshot, config.task, config.split,
                                config.n_eval_envs, max_steps=config.max_steps)
                checkpoints.append({
                    "frames": next_checkpoint,
                    "success_rate": rate,
                    "memory_entries": len(memory),
                })
                next_checkpoint += config.checkpoint_every

        final = evaluate(snapshot, config.task, config.split, config.n_eval_envs,
                         max_steps=config.max_steps)
        per_seed.append(SeedReport(
            seed=seed,
            frames=frames,
            episodes=episodes,
            final_success=final,
            checkpoints=checkpoints,
            invocation=_invocation_fractions(all_traces),
            counters=counters,
            commit_totals=commit_totals,
            unlock_ordering={"successes": unlock_successes, "ordered": unlock_ordered},
            train_seed_span={"min": min_env_seed, "max": max_env_seed,
                             "count": episodes},
        ))
        traces_by_seed[seed] = seed_traces
        memories_by_seed[seed] = memory
        if config.emit_graph_snapshots:
            graphs_by_seed[seed] = seed_graphs

    finals = [s.final_success for s in per_seed]
    return RunReport(
        task=config.task.value,
        split=config.split,
        gamma=config.gamma,
        frames_budget=config.frames,
        seeds=list(config.seeds),
        n_eval_envs=config.n_eval_envs,
        checkpoint_every=config.checkpoint_every,
        backends={
            "encoder": config.encoder_backend,
            "criticality": config.criticality_backend,
            "explorer": config.explorer_backend,
        },
        ablated=config.ablate_memory,
        memory_source=memory_source,
        per_seed=per_seed,
        final_mean=statistics.fmean(finals),
        final_std=statistics.stdev(finals) if len(finals) >= 2 else None,
        encoder_agreement=agreement,
        eval_seed_base=EVAL_SEED_BASE,
        wall_clock=time.perf_counter() - started,
        traces_by_seed=traces_by_seed,
        memories_by_seed=memories_by_seed,
        graph_snapshots_by_seed=graphs_by_seed,
    )


def run_transfer(config: RunConfig, source_memory_path: str) -> dict:
    """Evaluate the target task with memory imported from another task."""
    config.validate()
    source = EpisodicMemory.load(source_memory_path)
    memory = EpisodicMemory(task=config.task.value, gamma=source.gamma, created_at=0.0)
    merge = memory.import_foreign(source)
    client = make_client(config)
    snapshot = AgentSnapshot(
        memory=memory,
        encoder_backend=config.encoder_backend,
        criticality_backend=config.criticality_backend,
        explorer_backend=config.explorer_backend,
        client=client,
    )
    result = evaluate_detailed(snapshot, config.task, config.split,
                               config.n_eval_envs, max_steps=config.max_steps)
    return {
        "task": config.task.value,
        "split": config.split,
        "memory_source": source.task,
        "memory_sources": list(memory.sources),
        "success_rate": result.success_rate,
        "n_envs": result.n_envs,
        "imported": {
            "keys": merge.added_keys,
            "pairs": merge.added_pairs,
            "entries": len(memory),
        },
        "invocation": result.invocation,
    }


def transfer_table(task: str, rows: list[dict]) -> dict:
    """Cross-task results in the shape of the memory-transfer table."""
    return {
        "task": task,
        "columns": ["memory_source", "success_rate"],
        "rows": [
            {"memory_source": row["memory_source"], "success_rate": row["success_rate"]}
            for row in rows
        ],
    }


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------

def summary_payload(report: RunReport) -> dict:
    """Deterministic summary; wall-clock is provenance and lives elsewhere."""
    return {
        "task": report.task,
        "split": report.split,
        "gamma": report.gamma,
        "frames_budget": report.frames_budget,
        "seeds": report.seeds,
        "n_eval_envs": report.n_eval_envs,
        "backends": report.backends,
        "ablated": report.ablated,
        "memory_source": report.memory_source,
        "final": {
            "mean": report.final_mean,
            "std": report.final_std,
            "per_seed": {str(s.seed): s.final_success for s in report.per_seed},
        },
        "invocation": {str(s.seed): s.invocation for s in report.per_seed},
        "counters": {str(s.seed): s.counters for s in report.per_seed},
        "commit_totals": {str(s.seed): s.commit_totals for s in report.per_seed},
        "unlock_ordering": {str(s.seed): s.unlock_ordering for s in report.per_seed},
        "memory_entries": {str(s.seed): len(report.memories_by_seed[s.seed])
                           for s in report.per_seed if s.seed in report.memories_by_seed},
        "frames": {str(s.seed): s.frames for s in report.per_seed},
        "episodes": {str(s.seed): s.episodes for s in report.per_seed},
        "encoder_agreement": report.encoder_agreement,
        "seed_hygiene": {
            "eval_seed_base": report.eval_seed_base,
            "train_spans": {str(s.seed): s.train_seed_span for s in report.per_seed},
            "disjoint": all(
                (s.train_seed_span["max"] or 0) < report.eval_seed_base
                for s in report.per_seed
            ),
        },
    }


def learning_curve_rows(report: RunReport) -> list[list]:
    frames_axis = sorted({c["frames"] for s in report.per_seed for c in s.checkpoints})
    header = ["frames"] + [f"success_rate_seed{s.seed}" for s in report.per_seed]
    rows: list[list] = [header]
    for frames in frames_axis:
        row: list = [frames]
        for seed_report in report.per_seed:
            match = next((c for c in seed_report.checkpoints if c["frames"] == frames), None)
            row.append("" if match is None else match["success_rate"])
        rows.append(row)
    return rows


def invocation_rows(report: RunReport) -> list[list]:
    header = ["task", "split", "seed", "llm_policy_fraction",
              "exploration_fraction", "episodic_fraction", "decision_steps"]
    rows = [header]
    for s in report.per_seed:
        inv = s.invocation
        rows.append([
            report.task, report.split, s.seed,
            inv["llm_policy_fraction"], inv["exploration_fraction"],
            inv["episodic_fraction"], inv["decision_steps"],
        ])
    return rows


def _write_csv(path: str, rows: list[list]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerows(rows)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(buffer.getvalue())


def emit_outputs(report: RunReport, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary_payload(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_csv(os.path.join(out_dir, "learning_curve.csv"), learning_curve_rows(report))
    _write_csv(os.path.join(out_dir, "invocation_rate.csv"), invocation_rows(report))
    traces_dir = os.path.join(out_dir, "traces")
    os.makedirs(traces_dir, exist_ok=True)
    for seed, records in report.traces_by_seed.items():
        with open(os.path.join(traces_dir, f"seed{seed}.jsonl"), "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
    memory_dir = os.path.join(out_dir, "memory")
    os.makedirs(memory_dir, exist_ok=True)
    for seed, memory in report.memories_by_seed.items():
        memory.save(os.path.join(memory_dir, f"seed{seed}.jsonl"))
    if report.graph_snapshots_by_seed:
        graph_dir = os.path.join(out_dir, "graphs")
        os.makedirs(graph_dir, exist_ok=True)
        for seed, snapshots in report.graph_snapshots_by_seed.items():
            with open(os.path.join(graph_dir, f"seed{seed}.jsonl"), "w", encoding="utf-8") as fh:
                for snap in snapshots:
                    fh.write(snap + "\n")
    with open(os.path.join(out_dir, "run_meta.json"), "w", encoding="utf-8") as fh:
        json.dump({"wall_clock_seconds": report.wall_clock}, fh, indent=2, sort_keys=True)
        fh.write("\n")
