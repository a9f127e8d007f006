"""Dust & replace: clear a two-tier shelf, dust both tiers, restore the objects."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from .base import Grammar, TaskScore, WorldState, _choices

SHELVES = ("bottom", "top")
OBJECTS = (
    "panda plushie",
    "purple plushie",
    "zebra plushie",
    "elephant plushie",
    "lion plushie",
    "smily face ball",
    "hello kitty plushie",
    "baby shoe",
    "milk carton",
)

REMOVE = "remove the object on the {shelf} shelf"
PICKUP = "pick up duster"
DUST = "dust {shelf} shelf"
RESET = "reset duster"
PUTDOWN = "put down duster"
PLACE = "place the {obj} on the {shelf} shelf"
INSTRUCTION = "remove the items from the shelves, dust the shelves, and place the items back on the shelves"

GRAMMAR = Grammar.of(
    ("remove", r"remove the object on the " + _choices(SHELVES) + r" shelf"),
    ("pickup", r"pick up duster"),
    ("dust", r"dust " + _choices(SHELVES) + r" shelf"),
    ("reset", r"reset duster"),
    ("putdown", r"put down duster"),
    ("place", r"place the " + _choices(OBJECTS) + r" on the " + _choices(SHELVES) + r" shelf"),
)

# the duster's park pose is the same before, between and after dusting
PARK = "duster_park"
RESET_TICKS = 8


@dataclass
class DustReplaceState(WorldState):
    task = "dust"
    grammar = GRAMMAR

    original_layout: dict = field(default_factory=dict)
    shelves: dict = field(default_factory=dict)
    table: list = field(default_factory=list)
    removed: dict = field(default_factory=dict)
    dusted: dict = field(default_factory=dict)
    duster_held: bool = False
    carried_from: Optional[str] = None

    @classmethod
    def sample(cls, seed: int, steps_per_tick: int = 8) -> "DustReplaceState":
        rng = random.Random(seed)
        bottom, top = rng.sample(OBJECTS, 2)
        return cls.from_hidden(seed, {"original_layout": {"bottom": bottom, "top": top}}, steps_per_tick)

    @classmethod
    def from_hidden(cls, seed: int, hidden: dict, steps_per_tick: int = 8) -> "DustReplaceState":
        layout = dict(hidden["original_layout"])
        return cls(
            seed=seed,
            steps_per_tick=steps_per_tick,
            pose=PARK,
            original_layout=layout,
            shelves=dict(layout),
            removed={s: False for s in SHELVES},
            dusted={s: False for s in SHELVES},
        )

    def hidden(self) -> dict:
        return {"original_layout": self.original_layout}

    @property
    def replaced_correctly(self) -> dict:
        return {s: self.shelves.get(s) == self.original_layout[s] and self.removed[s] for s in SHELVES}

    def instruction(self) -> str:
        return INSTRUCTION

    @classmethod
    def plan(cls, kind, slots):
        if kind == "remove":
            (s,) = slots
            return (
                [("move-to", f"shelf:{s}")] * 2
                + [("grasp", f"shelf:{s}")]
                + [("move-to", "table")]
                + [("place", "table")]
                + [("park", None)]
            )
        if kind == "pickup":
            return [("move-to", PARK)] * 2 + [("grasp", "duster")]
        if kind == "dust":
            (s,) = slots
            return [("move-to", f"shelf:{s}")] * 3 + [("dust", s)] * 2 + [("park", None)]
        if kind == "reset":
            return [("move-to", PARK)] * (RESET_TICKS - 1) + [("park", None)]
        if kind == "putdown":
            return [("move-to", PARK)] * 2 + [("place", PARK)]
        obj, s = slots
        return (
            [("move-to", "table")]
            + [("grasp", obj)]
            + [("move-to", f"shelf:{s}")] * 2
            + [("place", f"shelf:{s}")]
            + [("park", None)]
        )

    def check(self, kind, slots, step, verb, arg):
        if kind == "remove" and verb == "grasp":
            if self.holding is not None:
                return "gripper not empty"
            if self.shelves.get(slots[0]) is None:
                return "shelf is empty"
        if kind == "pickup" and verb == "grasp" and (self.holding is not None or self.duster_held):
            return "gripper not empty"
        if kind in ("dust", "reset", "putdown") and not self.duster_held:
            return "duster not held"
        if kind == "place":
            obj, s = slots
            if verb == "grasp":
                if self.holding is not None:
                    return "gripper not empty"
                if obj not in self.table:
                    return f"{obj} not on table"
            if verb == "place" and self.shelves.get(s) is not None:
                return "shelf occupied"
        return None

    def effect(self, kind, slots, step, verb, arg):
        if kind == "remove":
            (s,) = slots
            if verb == "grasp":
                self.holding = self.shelves[s]
                self.shelves[s] = None
                self.removed[s] = True
                self.carried_from = s
            elif verb == "place":
                obj = self.holding
                self.table = sorted(self.table + [obj])
                self.holding = None
                self.emit("removed", shelf=self.carried_from, object=obj)
                self.carried_from = None
        elif kind == "pickup" and verb == "grasp":
            self.duster_held = True
            self.holding = "duster"
        elif kind == "dust" and verb == "dust" and step == 4:
            self.dusted[arg] = True
            self.emit("dust_stroke", shelf=arg)
        elif kind == "putdown" and verb == "place":
            self.duster_held = False
            self.holding = None
        elif kind == "place":
            obj, s = slots
            if verb == "grasp":
                self.table.remove(obj)
                self.holding = obj
            elif verb == "place":
                self.shelves[s] = obj
                self.holding = None
                self.emit("placed", shelf=s, object=obj)

    def on_complete(self, kind, slots):
        if (
            kind == "place"
            and all(self.removed.values())
            and not self.table
            and all(self.shelves.get(s) is not None for s in SHELVES)
            and not self.duster_held
        ):
            self.terminal = True

    def visible(self) -> dict:
        return {
            "shelves": {s: self.shelves.get(s) for s in SHELVES},
            "table": list(self.table),
            "duster": "held" if self.duster_held else "parked",
        }

    def score(self, timed_out: bool = False) -> TaskScore:
        rc = self.replaced_correctly
        comps = {
            "dust_bottom": int(self.dusted["bottom"]),
            "dust_top": int(self.dusted["top"]),
            "replace_bottom": int(rc["bottom"]),
            "replace_top": int(rc["top"]),
        }
        total = sum(comps.values())
        return TaskScore("dust", comps, total, 4, total == 4, timed_out)
