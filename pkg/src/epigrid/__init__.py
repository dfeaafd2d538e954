"""Episodic-memory agent for text gridworlds."""

__version__ = "0.1.0"

from .gridworld import (  # noqa: F401
    Action,
    Color,
    Direction,
    EntityKind,
    Environment,
    Observation,
    StepResult,
    Task,
    TaskSpec,
    default_spec,
    new_env,
    sample_task_spec,
)
from .encoder import (  # noqa: F401
    EncoderInput,
    StateKey,
    canonicalize,
    oracle_encode,
    parse_encoder_output,
)
from .episodic_memory import (  # noqa: F401
    EpisodeBuffer,
    EpisodicMemory,
    compute_returns,
)
from .world_graph import (  # noqa: F401
    WorldGraph,
    init_graph,
    parse_graph_output,
    serialize,
)
from .controller import Controller, ScriptedExplorer, exploit  # noqa: F401
from .llm_client import ChatRequest, LLMClient, request_digest  # noqa: F401
from .harness import AgentSnapshot, RunConfig, evaluate, run_training  # noqa: F401
