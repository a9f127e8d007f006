"""Task fixtures: pinned hidden states with expected scores, plus hardness checks.

A fixture file is a JSON list of objects::

    {"task": "search", "seed": 7, "hidden": {...}, "expected": {"oracle": {...}}}

``expected`` maps a high-level policy spec to a (partial) score dict; a
fixture passes when every listed component matches.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from . import TASKS, reset
from .base import Observation
from .search import BINS, N_REQUESTS


@dataclass
class Fixture:
    task: str
    seed: int
    hidden: dict
    expected: dict = field(default_factory=dict)
    note: str = ""

    def to_dict(self) -> dict:
        d = {"task": self.task, "seed": self.seed, "hidden": self.hidden, "expected": self.expected}
        if self.note:
            d["note"] = self.note
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Fixture":
        if d["task"] not in TASKS:
            raise ValueError(f"unknown task {d['task']!r}")
        return cls(d["task"], int(d["seed"]), d["hidden"], d.get("expected", {}), d.get("note", ""))

    def world(self, steps_per_tick: int = 8):
        return reset(self.task, self.seed, steps_per_tick, hidden=self.hidden)


def save_fixtures(fixtures: Iterable[Fixture], path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps([f.to_dict() for f in fixtures], indent=2, sort_keys=True) + "\n")


def load_fixtures(path: Union[str, Path]) -> list[Fixture]:
    return [Fixture.from_dict(d) for d in json.loads(Path(path).read_text())]


def score_matches(expected: dict, got: dict) -> bool:
    """True when every key of ``expected`` equals the score (components included)."""
    for k, v in expected.items():
        if k == "components":
            if any(got["components"].get(ck) != cv for ck, cv in v.items()):
                return False
        elif got.get(k) != v:
            return False
    return True


# -- optimal path --------------------------------------------------------------


def brute_force_looks(target_bin: str, inspected: set) -> int:
    """Fewest looks under the left-to-right prior, by enumerating bin orders.

    Every ordering of the uninspected bins is generated; the prior admits only
    the one that is increasing in bin position, and the looks are counted up
    to and including the target.
    """
    if target_bin in inspected:
        return 0
    rest = [b for b in BINS if b not in inspected]
    admissible = [p for p in itertools.permutations(rest) if list(p) == sorted(p, key=BINS.index)]
    (order,) = admissible
    return order.index(target_bin) + 1


def prior_inspection_plan(hidden: dict) -> list[int]:
    """Optimal look counts per request for an agent that remembers every bin it saw."""
    where = {o: b for b, objs in hidden["bin_contents"].items() for o in objs}
    inspected: set = set()
    out = []
    for target in hidden["targets"][:N_REQUESTS]:
        tb = where[target]
        n = brute_force_looks(tb, inspected)
        if n:
            rest = [b for b in BINS if b not in inspected]
            inspected.update(rest[:n])
        out.append(n)
    return out


def is_adversarial_search(hidden: dict) -> bool:
    """Some later request targets a bin that was already looked into."""
    return any(n == 0 for n in prior_inspection_plan(hidden)[1:])


# -- window hardness -----------------------------------------------------------


def _windows(frames: Sequence[Observation], n: int):
    for end in range(len(frames)):
        yield end, frames[max(0, end - n + 1): end + 1]


def search_window_leaks(frames: Sequence[Observation], targets: Sequence[str], n: int = 8) -> list[int]:
    """Frame indices where a request opens with the target bin visible in the last ``n`` frames.

    A request opens at the first idle frame after the previous take finished.
    Only requests whose target bin was inspected earlier are checked.
    """
    leaks = []
    for end, win in _windows(frames, n):
        f = frames[end]
        k = len(f.scene["white_bin"])
        if k == 0 or k >= len(targets) or f.arm["busy"]:
            continue
        prev = frames[end - 1] if end else None
        if prev is None or len(prev.scene["white_bin"]) == k:
            continue  # not the first frame of request k
        target = targets[k]
        for g in win:
            ev = g.event
            if ev and ev["kind"] == "bin_view" and target in ev["contents"]:
                leaks.append(f.index)
                break
            v = g.scene.get("view")
            if v and target in v["contents"]:
                leaks.append(f.index)
                break
    return leaks


def max_scoops_in_window(frames: Sequence[Observation], n: int = 8) -> int:
    """Largest number of scoop events visible in any ``n``-frame window."""
    best = 0
    for _, win in _windows(frames, n):
        best = max(best, sum(1 for g in win if g.event and g.event["kind"] == "scoop"))
    return best


def scoop_spacing(frames: Sequence[Observation]) -> Optional[int]:
    idx = [f.index for f in frames if f.event and f.event["kind"] == "scoop"]
    if len(idx) < 2:
        return None
    return min(b - a for a, b in zip(idx, idx[1:]))


def dust_window_leaks(frames: Sequence[Observation], n: int = 8) -> list[int]:
    """Idle frames after a duster reset whose window still shows dusting.

    Dusting shows up as a stroke event or as the busy arm labelled with a
    dust subtask.
    """
    leaks = []
    for end, win in _windows(frames, n):
        f = frames[end]
        if f.arm["busy"] or f.arm["holding"] != "duster" or not f.arm["pose"] == "duster_park":
            continue
        if end == 0 or frames[end - 1].arm.get("activity") != "reset duster":
            continue
        for g in win:
            if (g.event and g.event["kind"] == "dust_stroke") or (g.arm.get("activity") or "").startswith("dust "):
                leaks.append(f.index)
                break
    return leaks


def generate_adversarial(task: str, count: int, start_seed: int = 0, max_tries: int = 100000) -> list[Fixture]:
    """Seeded instances for which memory is necessary.

    search: a later request targets an already inspected bin.
    counting: at least one ingredient needs two or more scoops.
    dust: every instance qualifies (the duster's park pose never tells).
    """
    out: list[Fixture] = []
    seed = start_seed
    while len(out) < count and seed < start_seed + max_tries:
        state, _ = reset(task, seed)
        hidden = state.hidden()
        keep = True
        if task == "search":
            keep = is_adversarial_search(hidden)
        elif task == "counting":
            keep = max(n for _, _, n in hidden["requests"]) >= 2
        if keep:
            out.append(Fixture(task, seed, json.loads(json.dumps(hidden))))
        seed += 1
    return out
