"""Counting scoops: exact numbers of scoops of two ingredients into two bowls."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from .base import Grammar, TaskScore, WorldState, _choices

INGREDIENTS = ("peanuts", "jelly beans")
BOWLS = ("green", "blue")
NUMBER_WORDS = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight")
MAX_REQUEST = 4

PICKUP = "pick up the scooper"
SCOOP = "place a scoop of {ing} in the {bowl} bowl"
RESET = "reset scooper position"
DROP = "drop the scooper"

GRAMMAR = Grammar.of(
    ("pickup", r"pick up the scooper"),
    ("scoop", r"place a scoop of " + _choices(INGREDIENTS) + r" in the " + _choices(BOWLS) + r" bowl"),
    ("reset", r"reset scooper position"),
    ("drop", r"drop the scooper"),
)

RESET_TICKS = 8


def key(ing: str, bowl: str) -> str:
    return f"{ing}|{bowl}"


def split_key(k: str) -> tuple[str, str]:
    ing, bowl = k.split("|")
    return ing, bowl


def instruction_for(requests: list) -> str:
    """``requests`` is an ordered list of ``[ingredient, bowl, n]``."""
    parts = []
    for ing, bowl, n in requests:
        noun = "scoop" if n == 1 else "scoops"
        parts.append(f"{NUMBER_WORDS[n]} {noun} of {ing} and put it in the {bowl} bowl")
    return "get " + ", and ".join(parts)


@dataclass
class CountingState(WorldState):
    task = "counting"
    grammar = GRAMMAR

    requests: list = field(default_factory=list)
    completed: dict = field(default_factory=dict)
    loaded: Optional[str] = None
    dropped: bool = False

    @classmethod
    def sample(cls, seed: int, steps_per_tick: int = 8) -> "CountingState":
        rng = random.Random(seed)
        ings = rng.sample(INGREDIENTS, 2)
        bowls = rng.sample(BOWLS, 2)
        reqs = [[i, b, rng.randint(1, MAX_REQUEST)] for i, b in zip(ings, bowls)]
        return cls.from_hidden(seed, {"requests": reqs}, steps_per_tick)

    @classmethod
    def from_hidden(cls, seed: int, hidden: dict, steps_per_tick: int = 8) -> "CountingState":
        reqs = [list(r) for r in hidden["requests"]]
        return cls(seed=seed, steps_per_tick=steps_per_tick, requests=reqs, completed={})

    def hidden(self) -> dict:
        return {"requests": self.requests}

    @property
    def phase(self) -> str:
        if self.activity is None or self.done:
            return "idle"
        return {"scoop": "scooping", "reset": "resetting"}.get(self.grammar.parse(self.activity)[0], "idle")

    def instruction(self) -> str:
        return instruction_for(self.requests)

    @classmethod
    def plan(cls, kind, slots):
        if kind == "pickup":
            return [("move-to", "scooper_rack")] * 2 + [("grasp", "scooper")]
        if kind == "scoop":
            ing, bowl = slots
            return (
                [("move-to", f"ingredient:{ing}")] * 2
                + [("grasp", ing)]
                + [("move-to", f"bowl:{bowl}")]
                + [("pour", bowl)]
                + [("park", None)]
            )
        if kind == "reset":
            return [("move-to", "scoop_reset")] * (RESET_TICKS - 1) + [("park", None)]
        return [("move-to", "scooper_rack")] * 2 + [("place", "scooper_rack")]

    def check(self, kind, slots, step, verb, arg):
        if kind == "pickup" and verb == "grasp" and self.holding is not None:
            return "gripper not empty"
        if kind in ("scoop", "reset", "drop") and self.holding != "scooper":
            return "scooper not held"
        if verb == "grasp" and kind == "scoop" and self.loaded is not None:
            return "scooper already loaded"
        if verb == "pour" and self.loaded is None:
            return "scooper is empty"
        return None

    def effect(self, kind, slots, step, verb, arg):
        if kind == "pickup" and verb == "grasp":
            self.holding = "scooper"
        elif kind == "scoop" and verb == "grasp":
            self.loaded = slots[0]
        elif verb == "pour":
            k = key(self.loaded, arg)
            self.completed[k] = self.completed.get(k, 0) + 1
            self.emit("scoop", ingredient=self.loaded, bowl=arg)
            self.loaded = None
        elif kind == "drop" and verb == "place":
            self.holding = None
            self.dropped = True
            self.terminal = True

    def visible(self) -> dict:
        return {"bowls": list(BOWLS), "scooper_load": self.loaded}

    def wrong_scoops(self) -> int:
        req = {key(i, b): n for i, b, n in self.requests}
        keys = set(req) | set(self.completed)
        return sum(abs(req.get(k, 0) - self.completed.get(k, 0)) for k in keys)

    def score(self, timed_out: bool = False) -> TaskScore:
        wrong = self.wrong_scoops()
        comps = {
            "wrong_scoops": wrong,
            "requested": {key(i, b): n for i, b, n in self.requests},
            "completed": dict(sorted(self.completed.items())),
        }
        return TaskScore("counting", comps, wrong, None, wrong == 0 and self.dropped, timed_out)
