"""Object search: three opaque bins, three sequential retrieval requests."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from .base import Grammar, TaskScore, WorldState, _choices

BINS = ("left", "center", "right")
OBJECTS = (
    "green tape",
    "red block",
    "corn",
    "baguette",
    "blue block",
    "fried chicken",
    "milk carton",
    "ketchup",
    "eraser",
    "grapes",
    "strawberry",
    "tomato",
    "pear",
    "wooden block",
    "olive oil",
)
N_REQUESTS = 3

LOOK = "look inside the {bin} bin"
TAKE = "take the {obj} from the {bin} bin and place it in the white bin"
INSTRUCTION = "retrieve the {obj} and put it in the white bin"

GRAMMAR = Grammar.of(
    ("look", r"look inside the " + _choices(BINS) + r" bin"),
    ("take", r"take the " + _choices(OBJECTS) + r" from the " + _choices(BINS) + r" bin and place it in the white bin"),
)

# ticks per subtask: look = 6 (key frame is the first look tick), take = 8
LOOK_MOVE, TAKE_MOVE_IN, TAKE_MOVE_OUT = 4, 3, 2


def optimal_looks(target_bin: str, inspected: set) -> int:
    """Looks needed under the left-center-right prior, skipping inspected bins."""
    if target_bin in inspected:
        return 0
    n = 0
    for b in BINS:
        if b in inspected:
            continue
        n += 1
        if b == target_bin:
            return n
    raise ValueError(target_bin)


@dataclass
class ObjectSearchState(WorldState):
    task = "search"
    grammar = GRAMMAR

    bin_contents: dict = field(default_factory=dict)
    targets: list = field(default_factory=list)
    request: int = 0
    white_bin: list = field(default_factory=list)
    view: Optional[str] = None
    inspected: dict = field(default_factory=dict)
    look_counter: list = field(default_factory=list)
    optimal: list = field(default_factory=list)
    retrieved: list = field(default_factory=list)

    @classmethod
    def sample(cls, seed: int, steps_per_tick: int = 8) -> "ObjectSearchState":
        rng = random.Random(seed)
        n = rng.randint(3, 5)
        objs = rng.sample(OBJECTS, n)
        contents = {b: [] for b in BINS}
        for o in objs:
            contents[rng.choice(BINS)].append(o)
        targets = rng.sample(objs, N_REQUESTS)
        return cls.from_hidden(seed, {"bin_contents": contents, "targets": targets}, steps_per_tick)

    @classmethod
    def from_hidden(cls, seed: int, hidden: dict, steps_per_tick: int = 8) -> "ObjectSearchState":
        contents = {b: sorted(hidden["bin_contents"].get(b, [])) for b in BINS}
        s = cls(seed=seed, steps_per_tick=steps_per_tick, bin_contents=contents, targets=list(hidden["targets"]))
        s.inspected = {b: None for b in BINS}
        s._open_request()
        return s

    def hidden(self) -> dict:
        return {"bin_contents": self.bin_contents, "targets": self.targets}

    def _bin_of(self, obj: str) -> Optional[str]:
        for b, objs in self.bin_contents.items():
            if obj in objs:
                return b
        return None

    def _open_request(self) -> None:
        target = self.targets[self.request]
        seen = {b for b, f in self.inspected.items() if f is not None}
        self.look_counter.append(0)
        self.retrieved.append(False)
        self.optimal.append(optimal_looks(self._bin_of(target), seen))

    def instruction(self) -> str:
        i = min(self.request, N_REQUESTS - 1)
        return INSTRUCTION.format(obj=self.targets[i])

    @classmethod
    def plan(cls, kind, slots):
        if kind == "look":
            (b,) = slots
            return [("move-to", f"bin:{b}")] * LOOK_MOVE + [("look", b)] * 2
        obj, b = slots
        return (
            [("move-to", f"bin:{b}")] * TAKE_MOVE_IN
            + [("grasp", obj)]
            + [("move-to", "white_bin")] * TAKE_MOVE_OUT
            + [("place", "white_bin")]
            + [("park", None)]
        )

    def check(self, kind, slots, step, verb, arg):
        if verb == "grasp":
            obj, b = slots
            if self.holding is not None:
                return "gripper not empty"
            if obj not in self.bin_contents[b]:
                return f"{obj} not in {b} bin"
        if verb == "place" and self.holding is None:
            return "nothing to place"
        return None

    def on_start(self, kind, slots):
        self.view = None

    def effect(self, kind, slots, step, verb, arg):
        if verb == "look" and step == LOOK_MOVE:
            b = arg
            self.view = b
            self.inspected[b] = self.ticks_applied
            self.look_counter[self.request] += 1
            self.emit("bin_view", bin=b, contents=sorted(self.bin_contents[b]))
        elif verb == "grasp":
            obj, b = slots
            self.bin_contents[b].remove(obj)
            self.holding = obj
        elif verb == "place":
            obj = self.holding
            self.white_bin = sorted(self.white_bin + [obj])
            self.holding = None
            if obj == self.targets[self.request]:
                self.retrieved[self.request] = True

    def on_complete(self, kind, slots):
        if kind == "take":
            self.request += 1
            if self.request >= N_REQUESTS:
                self.terminal = True
            else:
                self._open_request()

    def visible(self) -> dict:
        view = None
        if self.view is not None:
            view = {"bin": self.view, "contents": sorted(self.bin_contents[self.view])}
        return {"white_bin": list(self.white_bin), "view": view}

    def score(self, timed_out: bool = False) -> TaskScore:
        retrieved = sum(1 for r in self.retrieved if r)
        optimal = sum(
            1
            for r, looks, best in zip(self.retrieved, self.look_counter, self.optimal)
            if r and looks <= best
        )
        comps = {
            "retrieved": retrieved,
            "optimal_path": optimal,
            "looks": list(self.look_counter),
            "optimal_looks": list(self.optimal),
        }
        total = retrieved + optimal
        return TaskScore("search", comps, total, 2 * N_REQUESTS, total == 2 * N_REQUESTS, timed_out)
