"""Seeded, partially observable desk-scale memory tasks."""

from __future__ import annotations

from typing import Optional

from .base import (
    Action,
    IncompleteEpisode,
    Observation,
    SimError,
    TaskScore,
    UnknownSubtask,
    UnknownTask,
    WorldState,
    noop,
)
from .counting import CountingState
from .dust import DustReplaceState
from .search import ObjectSearchState

TASKS: dict[str, type[WorldState]] = {
    "search": ObjectSearchState,
    "counting": CountingState,
    "dust": DustReplaceState,
}


def task_class(task: str) -> type[WorldState]:
    try:
        return TASKS[task]
    except KeyError:
        raise UnknownTask(task) from None


def reset(task: str, seed: int, steps_per_tick: int = 8, hidden: Optional[dict] = None):
    """Fresh world for ``task``; returns ``(state, first_observation)``.

    ``hidden`` overrides the seeded hidden state (used by fixtures).
    """
    cls = task_class(task)
    if hidden is None:
        state = cls.sample(seed, steps_per_tick)
    else:
        state = cls.from_hidden(seed, hidden, steps_per_tick)
    return state, state.peek(0)


def step(state: WorldState, action: Action):
    """Apply one action in place; returns ``(state, current_view, terminal)``.

    An illegal action leaves the world unchanged and sets ``state.last_error``.
    """
    state.apply(action)
    return state, state.peek(-1), state.terminal


def from_dict(d: dict) -> WorldState:
    return task_class(d["task"]).from_dict(d)


def score(task: str, final_state: WorldState, log=None) -> TaskScore:
    """Score a finished episode (terminal, or stopped by the tick limit)."""
    if final_state.task != task:
        raise UnknownTask(f"state is for {final_state.task!r}, not {task!r}")
    timed_out = False
    if log is not None:
        timed_out = any(r.kind == "TimeoutAtMaxTicks" for r in log.records)
    if not (final_state.terminal or timed_out):
        raise IncompleteEpisode(task)
    return final_state.score(timed_out=timed_out)


__all__ = [
    "Action",
    "CountingState",
    "DustReplaceState",
    "IncompleteEpisode",
    "ObjectSearchState",
    "Observation",
    "SimError",
    "TASKS",
    "TaskScore",
    "UnknownSubtask",
    "UnknownTask",
    "WorldState",
    "from_dict",
    "noop",
    "reset",
    "score",
    "step",
    "task_class",
]
