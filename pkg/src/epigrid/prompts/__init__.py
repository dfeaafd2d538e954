"""Versioned prompt templates shipped as text assets."""

from functools import lru_cache
from importlib import resources

PROMPT_VERSION = "1"

_NAMES = ("encoder", "world_graph", "critical", "explore", "env_description")


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    if name not in _NAMES:
        raise KeyError(f"unknown prompt template {name!r}")
    return resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")
