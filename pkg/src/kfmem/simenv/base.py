"""Subtask execution engine shared by the three simulated tasks.

A subtask label maps to a fixed plan: one ``(verb, arg)`` step per low-level
tick.  Each step must be received ``steps_per_tick`` times (one abstract
action per micro step) before its effect is applied.  Observations expose only
what a camera could see at that instant; one-shot ``event`` payloads are
consumed by :meth:`WorldState.observe` so they appear in exactly one frame.
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass
from typing import ClassVar, Optional

VERBS = ("move-to", "look", "grasp", "pour", "dust", "place", "park", "noop")


class SimError(Exception):
    pass


class UnknownTask(SimError):
    pass


class UnknownSubtask(SimError):
    pass


class IncompleteEpisode(SimError):
    pass


@dataclass(frozen=True)
class Action:
    subtask: str
    verb: str
    arg: Optional[str] = None

    def to_dict(self) -> dict:
        return {"subtask": self.subtask, "verb": self.verb, "arg": self.arg}

    @classmethod
    def from_dict(cls, d: dict) -> "Action":
        return cls(d["subtask"], d["verb"], d.get("arg"))


NOOP = "noop"


def noop(subtask: str = "") -> Action:
    return Action(subtask, NOOP)


@dataclass(frozen=True)
class Observation:
    """One composite frame (global + wrist camera) at a frame index."""

    index: int
    scene: dict
    camera_tags: tuple[str, ...] = ("global", "wrist")

    @property
    def event(self) -> Optional[dict]:
        return self.scene.get("event")

    @property
    def arm(self) -> dict:
        return self.scene["arm"]

    def to_dict(self) -> dict:
        return {"index": self.index, "scene": self.scene, "camera_tags": list(self.camera_tags)}

    @classmethod
    def from_dict(cls, d: dict) -> "Observation":
        return cls(d["index"], d["scene"], tuple(d.get("camera_tags", ("global", "wrist"))))

    def ref(self) -> str:
        """Content-addressed frame id."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return "frame-" + hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Grammar:
    """Closed subtask vocabulary: ``(kind, compiled pattern)`` pairs."""

    rules: tuple[tuple[str, re.Pattern], ...]

    @classmethod
    def of(cls, *pairs: tuple[str, str]) -> "Grammar":
        return cls(tuple((k, re.compile(p + r"\Z")) for k, p in pairs))

    def parse(self, label: str) -> tuple[str, tuple[str, ...]]:
        for kind, pat in self.rules:
            m = pat.match(label)
            if m:
                return kind, m.groups()
        raise UnknownSubtask(label)

    def kinds(self) -> list[str]:
        return [k for k, _ in self.rules]


def _choices(words) -> str:
    return "(" + "|".join(re.escape(w) for w in words) + ")"


@dataclass
class TaskScore:
    task: str
    components: dict
    total: int
    max_total: Optional[int]
    perfect: bool
    timed_out: bool = False

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "components": self.components,
            "total": self.total,
            "max_total": self.max_total,
            "perfect": self.perfect,
            "timed_out": self.timed_out,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskScore":
        return cls(d["task"], d["components"], d["total"], d["max_total"], d["perfect"], d.get("timed_out", False))


@dataclass
class WorldState:
    """Mutable world; subclasses add the hidden task state and the skill plans."""

    task: ClassVar[str] = ""
    grammar: ClassVar[Grammar]

    seed: int = 0
    steps_per_tick: int = 8
    pose: str = "home"
    holding: Optional[str] = None
    activity: Optional[str] = None
    progress: int = 0
    micro: int = 0
    done: bool = False
    pending_event: Optional[dict] = None
    illegal_count: int = 0
    last_error: Optional[str] = None
    terminal: bool = False
    ticks_applied: int = 0

    # -- hooks for subclasses -------------------------------------------------

    @classmethod
    def plan(cls, kind: str, slots: tuple) -> list[tuple[str, Optional[str]]]:
        """Skill plan for a parsed label; depends on the label only."""
        raise NotImplementedError

    def check(self, kind: str, slots: tuple, step: int, verb: str, arg) -> Optional[str]:
        """Return a reason string if the step is illegal right now."""
        return None

    def effect(self, kind: str, slots: tuple, step: int, verb: str, arg) -> None:
        pass

    def on_start(self, kind: str, slots: tuple) -> None:
        pass

    def on_complete(self, kind: str, slots: tuple) -> None:
        pass

    def visible(self) -> dict:
        """Task-specific visible scene (no hidden fields)."""
        return {}

    def instruction(self) -> str:
        raise NotImplementedError

    def score(self, timed_out: bool = False) -> TaskScore:
        raise NotImplementedError

    def hidden(self) -> dict:
        raise NotImplementedError

    # -- engine ---------------------------------------------------------------

    @classmethod
    def plan_for(cls, label: str) -> list[tuple[str, Optional[str]]]:
        kind, slots = cls.grammar.parse(label)
        return cls.plan(kind, slots)

    def apply(self, action: Action) -> bool:
        """Apply one abstract action; returns False (state unchanged) if illegal."""
        self.last_error = None
        if self.terminal:
            return self._illegal("episode is terminal")
        if action.verb == NOOP:
            return True
        try:
            kind, slots = self.grammar.parse(action.subtask)
        except UnknownSubtask:
            return self._illegal(f"unknown subtask {action.subtask!r}")
        plan = self.plan(kind, slots)
        starting = action.subtask != self.activity
        step = 0 if starting else self.progress
        if not starting and self.done:
            return self._illegal("subtask already complete")
        verb, arg = plan[step]
        if (action.verb, action.arg) != (verb, arg):
            return self._illegal(f"expected {verb}({arg}) got {action.verb}({action.arg})")
        reason = self.check(kind, slots, step, verb, arg)
        if reason:
            return self._illegal(reason)
        if starting:
            self.activity, self.progress, self.micro, self.done = action.subtask, 0, 0, False
            self.on_start(kind, slots)
        self.micro += 1
        if self.micro >= self.steps_per_tick:
            self.micro = 0
            if verb == "move-to":
                self.pose = arg
            self.effect(kind, slots, step, verb, arg)
            self.progress += 1
            self.ticks_applied += 1
            if self.progress >= len(plan):
                self.done = True
                self.on_complete(kind, slots)
        return True

    def _illegal(self, reason: str) -> bool:
        self.last_error = reason
        self.illegal_count += 1
        return False

    def emit(self, kind: str, **payload) -> None:
        self.pending_event = {"kind": kind, **payload}

    def _scene(self, event) -> dict:
        busy = self.activity is not None and not self.done
        scene = {
            "task": self.task,
            "arm": {
                "pose": self.pose,
                "holding": self.holding,
                "busy": busy,
                "activity": self.activity if busy else None,
            },
            "event": event,
        }
        scene.update(self.visible())
        return scene

    def proprio(self) -> dict:
        """Controller-side state; never part of a camera frame."""
        return {"activity": self.activity, "progress": self.progress, "micro": self.micro, "done": self.done,
                "steps_per_tick": self.steps_per_tick}

    def peek(self, index: int, proprio: bool = False) -> Observation:
        """Current view without consuming the one-shot event."""
        scene = self._scene(self.pending_event)
        if proprio:
            scene["proprio"] = self.proprio()
        return Observation(index, scene)

    def observe(self, index: int) -> Observation:
        obs = Observation(index, self._scene(self.pending_event))
        self.pending_event = None
        return obs

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        out = {"task": self.task}
        for k, v in self.__dict__.items():
            out[k] = copy.deepcopy(v)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "WorldState":
        d = dict(d)
        d.pop("task", None)
        obj = cls.__new__(cls)
        obj.__dict__.update(copy.deepcopy(d))
        return obj

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def copy(self) -> "WorldState":
        return copy.deepcopy(self)

