"""Acceptance gate: one test per release criterion, with a printed verdict.

Everything here runs offline: oracle encoder, oracle criticality, the
deterministic scripted explorer, and (for the replay criterion) an
in-process deterministic endpoint stand-in. Run with `pytest -s` to see the
per-criterion lines.
"""

import json
import random
import time
from contextlib import contextmanager

import pytest

from epigrid.controller import (
    Controller,
    OracleCriticality,
    ScriptedExplorer,
    SOURCE_EPISODIC,
)
from epigrid.encoder import canonicalize, oracle_encode
from epigrid.episodic_memory import (
    EpisodeBuffer,
    EpisodicMemory,
    compute_returns,
)
from epigrid.gridworld import (
    ACTION_ORDER,
    Action,
    Environment,
    Task,
    new_env,
    sample_task_spec,
)
from epigrid.harness import (
    AgentSnapshot,
    EndpointSettings,
    RunConfig,
    emit_outputs,
    evaluate_detailed,
    invocation_rows,
    run_training,
    run_transfer,
    trace_signature,
    transfer_table,
)
from epigrid.world_graph import (
    GroundTruthGraphUpdater,
    init_graph,
    is_retained,
    parse_graph_output,
    serialize,
)
from fake_endpoint import fake_transport


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL")
        raise
    print(f"ACCEPTANCE {name}: PASS")


def _random_buffer(rng, keys, max_len=10):
    buffer = EpisodeBuffer()
    for _ in range(rng.randrange(1, max_len)):
        buffer.record(rng.choice(keys), rng.choice(ACTION_ORDER),
                      rng.uniform(0.0, 1.0))
    buffer.seal()
    return buffer


# ---------------------------------------------------------------------------
# 1. Memory monotonicity and byte-exact idempotence
# ---------------------------------------------------------------------------

def test_memory_monotonicity_10k_commits():
    with criterion("memory-monotonicity"):
        started = time.perf_counter()
        rng = random.Random(1)
        keys = [f"key-{i}" for i in range(40)]
        commits = 0
        memory = EpisodicMemory("stress", gamma=0.99)
        floor: dict = {}
        while commits < 10_000:
            if commits % 500 == 0:
                memory = EpisodicMemory("stress", gamma=0.99)
                floor = {}
            buffer = _random_buffer(rng, keys)
            memory.commit(buffer, 0.99)
            commits += 1
            for key, entry in memory.entries.items():
                for action, value in entry.values.items():
                    assert value >= floor.get((key, action), float("-inf")), \
                        "a stored value decreased"
                    floor[(key, action)] = value
            if commits % 250 == 0:
                serialized = memory.dumps()
                memory.commit(buffer, 0.99)  # recommit of the same buffer
                assert memory.dumps() == serialized, "idempotence violated"
        elapsed = time.perf_counter() - started
        assert elapsed < 30.0, f"took {elapsed:.1f}s, budget is 30s"


# ---------------------------------------------------------------------------
# 2. Return recursion vs forward brute force
# ---------------------------------------------------------------------------

def test_return_oracle_equivalence():
    with criterion("return-oracle-equivalence"):
        rng = random.Random(2)
        for episode in range(1000):
            gamma = (0.5, 0.9, 0.99, 1.0)[episode % 4]
            rewards = [rng.uniform(-1.0, 1.0)
                       for _ in range(rng.randrange(1, 51))]
            buffer = EpisodeBuffer()
            for reward in rewards:
                buffer.record("k", Action.TURN_LEFT, reward)
            buffer.seal()
            backward = [value for _, _, value in compute_returns(buffer, gamma)]
            for t in range(len(rewards)):
                forward = sum(gamma ** (k - t) * rewards[k]
                              for k in range(t, len(rewards)))
                assert abs(backward[t] - forward) < 1e-12


# ---------------------------------------------------------------------------
# 3. Lookup / best_action vs linear scan
# ---------------------------------------------------------------------------

def test_lookup_and_best_action_brute_force_1000_memories():
    with criterion("exact-match-lookup"):
        rng = random.Random(3)
        keys = [f"key-{i}" for i in range(25)]
        for _ in range(1000):
            memory = EpisodicMemory("scan", gamma=0.9)
            for _ in range(rng.randrange(1, 5)):
                memory.commit(_random_buffer(rng, keys), 0.9)
            probes = rng.sample(keys, 6) + ["never-seen"]
            for probe in probes:
                scan_hit = None
                for key, entry in memory.entries.items():
                    if key == probe:
                        scan_hit = entry
                assert memory.lookup(probe) is scan_hit
                if scan_hit is not None and scan_hit.values:
                    best_value = max(scan_hit.values.values())
                    expected = next(a for a in ACTION_ORDER
                                    if scan_hit.values.get(a) == best_value)
                    assert memory.best_action(probe) == (expected, best_value)


# ---------------------------------------------------------------------------
# 4. Retain-all over long random walks + adversarial repairs
# ---------------------------------------------------------------------------

def _no_success_findobj(index):
    """A six-room layout whose mission target is absent, so random walks
    never terminate early; held-out pairs never occur in standard layouts."""
    spec = sample_task_spec(Task.FIND_OBJ, random.Random(f"walk:{index}"),
                            max_steps=1200)
    env = new_env(spec, 40_000 + index)
    snapshot = json.loads(env.to_json())
    snapshot["spec"]["target"] = ["purple", "ball"]
    return Environment.from_json(json.dumps(snapshot))


def test_world_graph_retain_all_100_random_walks():
    with criterion("retain-all"):
        for index in range(100):
            env = _no_success_findobj(index)
            walker = random.Random(f"walker:{index}")
            updater = GroundTruthGraphUpdater()
            graph = init_graph()
            before = env.ground_truth()
            for _ in range(1000):
                action = walker.choice(list(Action))
                env.step(action)
                after = env.ground_truth()
                prior = graph
                graph = updater.update(graph, before, action, after)
                assert is_retained(prior, graph), "oracle update dropped data"
                before = after

        # adversarial mutated outputs must be repaired and counted
        rng = random.Random(9)
        env = _no_success_findobj(0)
        walker = random.Random("adversary")
        updater = GroundTruthGraphUpdater()
        graph = init_graph()
        before = env.ground_truth()
        repairs_seen = 0
        for _ in range(400):
            action = walker.choice(list(Action))
            env.step(action)
            after = env.ground_truth()
            graph = updater.update(graph, before, action, after)
            before = after
            if rng.random() < 0.2:
                lines = serialize(graph).splitlines()
                body = [line for line in lines[1:] if line]
                if not body:
                    continue
                mutated = list(lines)
                victim = rng.choice(range(1, len(mutated)))
                if mutated[victim].startswith("room") and "[" in mutated[victim]:
                    mutated[victim] = mutated[victim].split(" [")[0] + " []"
                else:
                    del mutated[victim]
                prior = graph
                parsed = parse_graph_output("\n".join(mutated), prior)
                assert is_retained(prior, parsed), "repair failed to re-add data"
                repairs_seen += parsed.repair_count - prior.repair_count
                graph = parsed
        assert repairs_seen > 0, "the mutations never exercised the repair path"


# ---------------------------------------------------------------------------
# 5. Distance invariance of the encoding
# ---------------------------------------------------------------------------

def test_distance_invariance_500_scene_pairs():
    from helpers import build_env

    with criterion("distance-invariance"):
        rng = random.Random(5)
        phrases = ("forward", "left", "right", "left and forward",
                   "right and forward")

        def place(phrase, dist):
            if phrase == "forward":
                return (8, 8 - dist)
            if phrase == "left":
                return (8 - dist, 8)
            if phrase == "right":
                return (8 + dist, 8)
            lat = rng.randrange(1, min(3, dist) + 1)
            fwd = dist if lat < dist else rng.randrange(1, dist + 1)
            dx = -lat if phrase == "left and forward" else lat
            return (8 + dx, 8 - fwd)

        for _ in range(500):
            phrase = rng.choice(phrases)
            if phrase in ("left", "right"):
                near, far = 2, 3
            else:
                near = rng.randrange(2, 4)
                far = rng.randrange(near + 1, 7)
            keys = []
            for dist in (near, far):
                env = build_env(width=17, height=17, target=("red", "ball"),
                                agent=(8, 8, "north"),
                                entities=[(*place(phrase, dist), "ball", "red")])
                keys.append(canonicalize(oracle_encode(env.ground_truth(),
                                                       env.spec)))
            assert keys[0] == keys[1], f"distance leaked into the key: {keys}"


# ---------------------------------------------------------------------------
# 6. Gating soundness on full episodes
# ---------------------------------------------------------------------------

def test_gating_soundness_on_oracle_episodes():
    with criterion("gating-soundness"):
        episodic_steps = 0
        for trial in range(12):
            task = (Task.GO_TO_LOCAL, Task.PICKUP_LOCAL, Task.UNLOCK_LOCAL)[trial % 3]
            memory = EpisodicMemory(task.value, gamma=0.99)
            for episode in range(8):
                spec = sample_task_spec(task, random.Random(f"g:{trial}:{episode}"))
                env = new_env(spec, 60_000 + 100 * trial + episode)
                observation = env.reset()
                explorer = ScriptedExplorer(env.mission)
                controller = Controller(memory, OracleCriticality(), explorer)
                buffer = EpisodeBuffer()
                while not env.done:
                    key = oracle_encode(env.ground_truth(), env.spec)
                    lookups_before = memory.lookup_count
                    action, trace = controller.decide(observation, key,
                                                      init_graph())
                    if trace.source == SOURCE_EPISODIC:
                        episodic_steps += 1
                        assert trace.critical, \
                            "episodic decision at a non-critical step"
                    if not trace.critical:
                        assert memory.lookup_count == lookups_before, \
                            "non-critical step performed a memory lookup"
                    result = env.step(action)
                    buffer.record(canonicalize(key), action, result.reward)
                    observation = result.observation
                buffer.seal()
                memory.commit(buffer, 0.99)
        assert episodic_steps > 0, "exploitation never engaged; test is vacuous"


# ---------------------------------------------------------------------------
# 7 + 11. Learning effect and invocation-rate direction
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def learning_runs(tmp_path_factory):
    started = time.perf_counter()
    config = RunConfig(task=Task.GO_TO_LOCAL, seeds=[1, 2, 3], frames=25_000,
                       n_eval_envs=100, checkpoint_every=5_000,
                       keep_traces=False)
    learned = run_training(config)
    ablated_config = RunConfig(task=Task.GO_TO_LOCAL, seeds=[1, 2, 3],
                               frames=25_000, n_eval_envs=100,
                               checkpoint_every=5_000, keep_traces=False,
                               ablate_memory=True)
    ablated = run_training(ablated_config)
    elapsed = time.perf_counter() - started
    return learned, ablated, elapsed


def test_oracle_learning_effect(learning_runs):
    learned, ablated, elapsed = learning_runs
    with criterion("oracle-learning-effect"):
        assert learned.frames_budget <= 25_000
        assert all(seed.frames <= 25_000 for seed in learned.per_seed)
        assert learned.final_mean >= 0.70, \
            f"final success {learned.final_mean:.3f} < 0.70"
        gap = learned.final_mean - ablated.final_mean
        assert gap >= 0.10, (
            f"memory gain {gap:.3f} < 0.10 "
            f"({learned.final_mean:.3f} vs ablated {ablated.final_mean:.3f})")
        assert elapsed < 300.0, f"runtime {elapsed:.0f}s exceeds 5 minutes"
        print(f"  [learning] mean={learned.final_mean:.3f} "
              f"ablated={ablated.final_mean:.3f} gap={gap:.3f} "
              f"runtime={elapsed:.0f}s")


def test_invocation_rate_direction(learning_runs, tmp_path):
    learned, _, _ = learning_runs
    with criterion("invocation-rate"):
        trained_memory = learned.memories_by_seed[1]
        warm = evaluate_detailed(AgentSnapshot(memory=trained_memory),
                                 Task.GO_TO_LOCAL, "no_change", 100)
        cold = evaluate_detailed(
            AgentSnapshot(memory=EpisodicMemory("GoToLocal", gamma=0.99)),
            Task.GO_TO_LOCAL, "no_change", 100)
        assert warm.invocation["exploration_fraction"] \
            < cold.invocation["exploration_fraction"], (
                "a pre-seeded memory should displace exploration-policy calls")
        # report shape: per-seed fractions, one row each
        rows = invocation_rows(learned)
        assert rows[0] == ["task", "split", "seed", "llm_policy_fraction",
                           "exploration_fraction", "episodic_fraction",
                           "decision_steps"]
        assert len(rows) == 1 + len(learned.seeds)
        print(f"  [invocation] warm={warm.invocation['exploration_fraction']:.3f} "
              f"cold={cold.invocation['exploration_fraction']:.3f}")


# ---------------------------------------------------------------------------
# 8. UnlockLocal structure: key before door
# ---------------------------------------------------------------------------

def test_unlock_key_pickup_precedes_toggle():
    with criterion("unlock-structure"):
        config = RunConfig(task=Task.UNLOCK_LOCAL, seeds=[1], frames=6_000,
                           n_eval_envs=10, checkpoint_every=6_000,
                           keep_traces=False)
        report = run_training(config)
        ordering = report.per_seed[0].unlock_ordering
        assert ordering["successes"] >= 20, \
            f"only {ordering['successes']} successful unlock episodes"
        ratio = ordering["ordered"] / ordering["successes"]
        assert ratio >= 0.95, f"key-before-door ratio {ratio:.3f} < 0.95"
        print(f"  [unlock] {ordering['ordered']}/{ordering['successes']} ordered")


# ---------------------------------------------------------------------------
# 9. Transfer direction
# ---------------------------------------------------------------------------

def test_transfer_from_pickup_helps_goto(tmp_path):
    with criterion("transfer-direction"):
        source_config = RunConfig(task=Task.PICKUP_LOCAL, seeds=[1],
                                  frames=12_000, n_eval_envs=10,
                                  checkpoint_every=12_000, keep_traces=False)
        source_report = run_training(source_config)
        memory_path = tmp_path / "pickup_memory.jsonl"
        source_report.memories_by_seed[1].save(str(memory_path))

        target_config = RunConfig(task=Task.GO_TO_LOCAL, seeds=[1],
                                  frames=1, n_eval_envs=100)
        transfer_report = run_transfer(target_config, str(memory_path))
        cold = evaluate_detailed(
            AgentSnapshot(memory=EpisodicMemory("GoToLocal", gamma=0.99)),
            Task.GO_TO_LOCAL, "no_change", 100)

        assert transfer_report["memory_source"] == "PickupLocal"
        assert transfer_report["success_rate"] >= cold.success_rate, (
            f"transfer {transfer_report['success_rate']:.3f} fell below "
            f"cold start {cold.success_rate:.3f}")

        table = transfer_table("GoToLocal", [
            {"memory_source": "raw", "success_rate": cold.success_rate},
            transfer_report,
        ])
        assert table["columns"] == ["memory_source", "success_rate"]
        assert len(table["rows"]) == 2
        (tmp_path / "transfer_table.json").write_text(
            json.dumps(table, indent=2, sort_keys=True))
        print(f"  [transfer] with-memory={transfer_report['success_rate']:.3f} "
              f"cold={cold.success_rate:.3f}")


# ---------------------------------------------------------------------------
# 10. Replay fidelity
# ---------------------------------------------------------------------------

def test_replay_fidelity_with_cached_endpoint(tmp_path):
    with criterion("replay-fidelity"):
        def config(mode):
            return RunConfig(
                task=Task.GO_TO_LOCAL, seeds=[1], frames=150, n_eval_envs=5,
                checkpoint_every=150,
                encoder_backend="llm", criticality_backend="llm",
                explorer_backend="llm",
                endpoint=EndpointSettings(url="http://fake.invalid/v1",
                                          cache_dir=str(tmp_path / "cache"),
                                          mode=mode),
            )

        online = run_training(config("online"), transport=fake_transport)
        replayed = run_training(config("cache-only"))  # zero network access
        assert trace_signature(replayed.traces_by_seed[1]) \
            == trace_signature(online.traces_by_seed[1])
        assert replayed.final_mean == online.final_mean
        assert replayed.per_seed[0].invocation == online.per_seed[0].invocation

        out_a, out_b = tmp_path / "online", tmp_path / "replay"
        emit_outputs(online, str(out_a))
        emit_outputs(replayed, str(out_b))
        assert (out_a / "summary.json").read_bytes() \
            == (out_b / "summary.json").read_bytes()
