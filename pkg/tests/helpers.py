"""Shared test fixtures: hand-built scenes via the snapshot interface."""

from __future__ import annotations

import json
from typing import Optional

from epigrid.gridworld import Environment, SNAPSHOT_FORMAT


def build_env(task: str = "GoToLocal",
              target: tuple[str, str] = ("red", "ball"),
              width: int = 10, height: int = 10,
              agent: tuple[int, int, str] = (4, 4, "north"),
              entities: Optional[list[tuple]] = None,
              carrying: Optional[tuple[str, str]] = None,
              target_pos: Optional[tuple[int, int]] = None,
              rooms: Optional[list[list[int]]] = None,
              max_steps: int = 64,
              distractors: int = 8,
              task_rooms: int = 1,
              with_walls: bool = True) -> Environment:
    """Environment with an exact layout, bypassing random generation.

    entities: list of (x, y, kind, color) or (x, y, kind, color, state).
    """
    cells = []
    if with_walls:
        for x in range(width):
            cells.append([x, 0, "wall", "grey", None])
            cells.append([x, height - 1, "wall", "grey", None])
        for y in range(1, height - 1):
            cells.append([0, y, "wall", "grey", None])
            cells.append([width - 1, y, "wall", "grey", None])
    occupied = {(c[0], c[1]) for c in cells}
    for entry in entities or []:
        x, y, kind, color = entry[:4]
        state = entry[4] if len(entry) > 4 else None
        if (x, y) in occupied:
            cells = [c for c in cells if (c[0], c[1]) != (x, y)]
        cells.append([x, y, kind, color, state])
        occupied.add((x, y))
    payload = {
        "format": SNAPSHOT_FORMAT,
        "spec": {
            "task": task,
            "target": list(target),
            "rooms": task_rooms,
            "distractors": distractors,
            "max_steps": max_steps,
        },
        "seed": 0,
        "width": width,
        "height": height,
        "rooms": rooms or [[1, 1, width - 2, height - 2]],
        "cells": cells,
        "agent": {"x": agent[0], "y": agent[1], "dir": agent[2]},
        "carrying": list(carrying) if carrying else None,
        "target_pos": list(target_pos) if target_pos else None,
        "steps_used": 0,
        "done": False,
        "success": False,
    }
    return Environment.from_json(json.dumps(payload))
