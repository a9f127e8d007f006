"""High-level and low-level policies.

The scripted high-level policies decide only from what the camera frames show:
the recent window, the frames memory hands back, and the instruction.  They
never see a :class:`~kfmem.simenv.WorldState`.  The ablated variants run the
same decision rules on a masked context and flag every decision that had to
lean on missing evidence.

The scripted low-level executor turns a subtask label into an action chunk by
replaying the skill plan from the controller's own progress counters.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .simenv import Action, Observation, UnknownSubtask, noop, task_class
from .simenv import counting as _counting
from .simenv import dust as _dust
from .simenv import search as _search


class PolicyError(RuntimeError):
    pass


class InsufficientInformation(PolicyError):
    """The context cannot determine the next subtask.

    Policies catch it, answer with a task prior and set
    ``HLDecision.insufficient`` so the log shows where memory ran out.
    """


# events worth remembering, per task; these are the frames the oracle nominates
KEY_EVENTS = {
    "search": frozenset({"bin_view"}),
    "counting": frozenset({"scoop"}),
    "dust": frozenset({"removed", "dust_stroke", "placed"}),
}


@dataclass(frozen=True)
class HLContext:
    window: tuple[Observation, ...]
    keyframes: tuple[Observation, ...] = ()
    instruction: str = ""
    text_memory: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.window and self.keyframes:
            first = self.window[0].index
            if any(k.index >= first for k in self.keyframes):
                raise ValueError("keyframes must precede the recent window")

    @property
    def newest(self) -> Observation:
        return self.window[-1]


@dataclass(frozen=True)
class HLDecision:
    subtask: str
    nominations: tuple[int, ...] = ()
    insufficient: bool = False

    def to_dict(self) -> dict:
        return {"subtask": self.subtask, "nominations": list(self.nominations), "insufficient": self.insufficient}

    @classmethod
    def from_dict(cls, d: dict) -> "HLDecision":
        return cls(d["subtask"], tuple(d["nominations"]), d.get("insufficient", False))


@dataclass
class _Evidence:
    """Events seen in the frames a policy is allowed to look at, oldest first."""

    events: list  # (frame index, event dict)
    views: dict  # bin -> (frame index, contents), search only

    @classmethod
    def collect(cls, frames: Sequence[Observation]) -> "_Evidence":
        seen: dict[int, dict] = {}
        views: dict[str, tuple[int, list]] = {}
        for f in frames:
            ev = f.event
            if ev is not None:
                seen[f.index] = ev
            v = f.scene.get("view")
            if ev is not None and ev["kind"] == "bin_view":
                v = ev
            if v is not None:
                prev = views.get(v["bin"])
                if prev is None or prev[0] <= f.index:
                    views[v["bin"]] = (f.index, list(v["contents"]))
        events = sorted(seen.items())
        return cls(events, views)

    def of(self, kind: str) -> list[dict]:
        return [e for _, e in self.events if e["kind"] == kind]


def nominate(task: str, window: Sequence[Observation]) -> tuple[int, ...]:
    """1-indexed positions of window frames that carry a remembered event."""
    keys = KEY_EVENTS[task]
    return tuple(i + 1 for i, f in enumerate(window) if f.event is not None and f.event["kind"] in keys)


# -- per-task decision rules ---------------------------------------------------
# Each returns (label, leaned_on_absence): the flag is set when the choice
# depends on some past event *not* being in view, which only memory can vouch for.

_TARGET = re.compile(r"retrieve the (.+) and put it in the white bin\Z")
_REQUEST = re.compile(r"(\w+) scoops? of (.+?) and put it in the (\w+) bowl")


def search_target(instruction: str) -> str:
    m = _TARGET.match(instruction)
    if not m:
        raise InsufficientInformation(f"cannot read target from {instruction!r}")
    return m.group(1)


def counting_requests(instruction: str) -> list[tuple[str, str, int]]:
    """Ordered ``(ingredient, bowl, n)`` requests read from the instruction."""
    out = []
    for word, ing, bowl in _REQUEST.findall(instruction):
        out.append((ing, bowl, _counting.NUMBER_WORDS.index(word)))
    if not out:
        raise InsufficientInformation(f"no scoop requests in {instruction!r}")
    return out


def _decide_search(ev: _Evidence, newest: Observation, instruction: str, text: Optional[Sequence[str]]):
    target = search_target(instruction)
    for b in _search.BINS:
        view = ev.views.get(b)
        if view is not None and target in view[1]:
            return _search.TAKE.format(obj=target, bin=b), False
    # explore: the next unseen bin after the last one looked into, in left-center-right order
    unseen = [b for b in _search.BINS if b not in ev.views]
    if not unseen:
        raise InsufficientInformation(f"{target} not in any remembered bin")
    start = 0
    if ev.views:
        last = max(ev.views, key=lambda b: ev.views[b][0])
        start = _search.BINS.index(last) + 1
    order = _search.BINS[start:] + _search.BINS[:start]
    pick = next(b for b in order if b in unseen)
    return _search.LOOK.format(bin=pick), True


def _decide_counting(ev: _Evidence, newest: Observation, instruction: str, text: Optional[Sequence[str]]):
    arm = newest.arm
    requests = counting_requests(instruction)
    if arm["holding"] != "scooper":
        return _counting.PICKUP, False
    counts: dict[str, int] = {}
    if text is not None:
        for label in text:
            kind, slots = _counting.GRAMMAR.parse(label)
            if kind == "scoop":
                k = _counting.key(*slots)
                counts[k] = counts.get(k, 0) + 1
    else:
        for e in ev.of("scoop"):
            k = _counting.key(e["ingredient"], e["bowl"])
            counts[k] = counts.get(k, 0) + 1
    todo = next(((i, b) for i, b, n in requests if counts.get(_counting.key(i, b), 0) < n), None)
    just_scooped = arm["pose"].startswith("bowl:")
    if todo is None:
        return _counting.DROP, False
    if just_scooped:
        return _counting.RESET, False
    return _counting.SCOOP.format(ing=todo[0], bowl=todo[1]), True


def _decide_dust(ev: _Evidence, newest: Observation, instruction: str, text: Optional[Sequence[str]]):
    scene, arm = newest.scene, newest.arm
    shelves, table = scene["shelves"], scene["table"]
    layout = {e["shelf"]: e["object"] for e in ev.of("removed")}
    dusted = {e["shelf"] for e in ev.of("dust_stroke")}
    if text is not None:
        for label in text:
            kind, slots = _dust.GRAMMAR.parse(label)
            if kind == "dust":
                dusted.add(slots[0])
    # an arm holding the duster at a shelf has just dusted it
    if arm["holding"] == "duster" and arm["pose"].startswith("shelf:"):
        dusted.add(arm["pose"].split(":", 1)[1])

    if scene["duster"] == "held":
        if dusted >= set(_dust.SHELVES):
            return _dust.PUTDOWN, False
        if "bottom" in dusted:
            if arm["pose"] == "shelf:bottom":
                return _dust.RESET, False
            return _dust.DUST.format(shelf="top"), False
        return _dust.DUST.format(shelf="bottom"), True

    bottom, top = shelves["bottom"], shelves["top"]
    if bottom is not None and top is not None and not table:
        return _dust.REMOVE.format(shelf="bottom"), False
    if bottom is None and top is not None:
        return _dust.REMOVE.format(shelf="top"), False
    if bottom is None and top is None:
        if not dusted >= set(_dust.SHELVES):
            return _dust.PICKUP, True
        return _place(layout, table, "bottom")
    return _place(layout, table, "top")


def _place(layout: dict, table: list, shelf: str):
    obj = layout.get(shelf)
    if obj is None or obj not in table:
        raise InsufficientInformation(f"original object of the {shelf} shelf is not remembered")
    return _dust.PLACE.format(obj=obj, shelf=shelf), False


def _dust_prior(newest: Observation) -> str:
    """Fallback when the layout is unknown: put the first table object back."""
    scene = newest.scene
    shelf = "bottom" if scene["shelves"]["bottom"] is None else "top"
    return _dust.PLACE.format(obj=scene["table"][0], shelf=shelf)


_RULES: dict[str, Callable] = {
    "search": _decide_search,
    "counting": _decide_counting,
    "dust": _decide_dust,
}


def decide(task: str, frames: Sequence[Observation], newest: Observation, instruction: str, text=None):
    """Shared decision rule; returns ``(label, leaned_on_absence)``."""
    arm = newest.arm
    if arm["busy"]:
        return arm["activity"], False
    return _RULES[task](_Evidence.collect(frames), newest, instruction, text)


# -- policies ------------------------------------------------------------------


class HLPolicy:
    """Base high-level policy: subclasses choose which parts of the context they see."""

    name = "base"
    masked = False

    def visible(self, ctx: HLContext) -> tuple[list[Observation], Optional[Sequence[str]]]:
        raise NotImplementedError

    def __call__(self, ctx: HLContext) -> HLDecision:
        if not ctx.window:
            raise PolicyError("empty window")
        task = ctx.newest.scene["task"]
        frames, text = self.visible(ctx)
        noms = self.nominations(task, ctx)
        try:
            label, blind = decide(task, frames, ctx.newest, ctx.instruction, text)
        except InsufficientInformation:
            return HLDecision(self.prior(task, ctx.newest), noms, True)
        return HLDecision(label, noms, blind and self.masked)

    def nominations(self, task: str, ctx: HLContext) -> tuple[int, ...]:
        return nominate(task, ctx.window)

    def prior(self, task: str, newest: Observation) -> str:
        if task == "dust":
            return _dust_prior(newest)
        if task == "search":
            return _search.LOOK.format(bin=_search.BINS[0])
        return _counting.DROP


class OracleHL(HLPolicy):
    """Uses window and consolidated keyframes."""

    name = "oracle"

    def visible(self, ctx):
        return list(ctx.keyframes) + list(ctx.window), None


class MemorylessHL(HLPolicy):
    name = "none"
    masked = True

    def visible(self, ctx):
        return [ctx.newest], None

    def nominations(self, task, ctx):
        return tuple(len(ctx.window) - 1 + p for p in nominate(task, ctx.window[-1:]))


class ShortHistoryHL(HLPolicy):
    name = "short"
    masked = True

    def visible(self, ctx):
        return list(ctx.window), None


class TextMemoryHL(HLPolicy):
    """Recent window plus the log of committed subtask labels."""

    name = "text"
    masked = True

    def visible(self, ctx):
        return list(ctx.window), tuple(ctx.text_memory or ())


def oracle_hl(ctx: HLContext) -> HLDecision:
    return OracleHL()(ctx)


def memoryless_hl(ctx: HLContext) -> HLDecision:
    return MemorylessHL()(ctx)


def short_history_hl(ctx: HLContext) -> HLDecision:
    return ShortHistoryHL()(ctx)


def text_memory_hl(ctx: HLContext) -> HLDecision:
    return TextMemoryHL()(ctx)


class NoisyNominator(HLPolicy):
    """Perturbs each nominated position by a uniform integer in ``[-jitter, jitter]``."""

    def __init__(self, inner: HLPolicy, jitter: int, seed: int = 0):
        if jitter < 0:
            raise ValueError("jitter must be >= 0")
        self.inner, self.jitter = inner, jitter
        self.rng = random.Random(seed)
        self.name = f"noisy:{jitter}"

    def __call__(self, ctx: HLContext) -> HLDecision:
        dec = self.inner(ctx)
        if self.jitter == 0:
            return dec
        n = len(ctx.window)
        moved = sorted(min(n, max(1, p + self.rng.randint(-self.jitter, self.jitter))) for p in dec.nominations)
        return HLDecision(dec.subtask, tuple(moved), dec.insufficient)


def noisy_nominator(inner: HLPolicy, jitter: int, seed: int = 0) -> NoisyNominator:
    return NoisyNominator(inner, jitter, seed)


def make_hl(spec: str, seed: int = 0) -> HLPolicy:
    """Build a policy from a CLI spec: ``oracle|none|short|text|noisy:<j>``."""
    if spec.startswith("noisy:"):
        try:
            j = int(spec.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad jitter in {spec!r}") from None
        return NoisyNominator(OracleHL(), j, seed)
    table = {"oracle": OracleHL, "none": MemorylessHL, "short": ShortHistoryHL, "text": TextMemoryHL}
    if spec not in table:
        raise ValueError(f"unknown high-level policy {spec!r}")
    return table[spec]()


# -- low level -----------------------------------------------------------------


@dataclass
class FailureProfile:
    """Chance per low-level tick that the executor freezes and emits a no-op chunk.

    Args:
        p: default failure probability.
        max_consecutive: cap on back-to-back failures so every subtask finishes.
        seed: seed of the owned generator.
        per_subtask: overrides keyed by subtask kind (e.g. ``"scoop"``).
    """

    p: float = 0.0
    max_consecutive: int = 3
    seed: int = 0
    per_subtask: dict = field(default_factory=dict)

    def __post_init__(self):
        for q in [self.p, *self.per_subtask.values()]:
            if not 0.0 <= q <= 1.0:
                raise ValueError(f"failure probability {q} outside [0, 1]")
        self._rng = random.Random(self.seed)
        self._streak = 0

    def fails(self, kind: str) -> bool:
        q = self.per_subtask.get(kind, self.p)
        if q <= 0.0:
            return False
        hit = self._rng.random() < q
        if hit and self._streak >= self.max_consecutive:
            hit = False
        self._streak = self._streak + 1 if hit else 0
        return hit


def scripted_ll(subtask: str, obs: Observation, chunk_len: int, profile: Optional[FailureProfile] = None) -> list[Action]:
    """Action chunk for ``subtask`` given an observation carrying proprioception.

    The chunk replays the remaining skill plan, each step repeated for the
    world's micro-steps per tick, padded with no-ops.
    """
    cls = task_class(obs.scene["task"])
    kind, slots = cls.grammar.parse(subtask)  # raises UnknownSubtask
    proprio = obs.scene.get("proprio")
    if proprio is None:
        raise PolicyError("low-level policy needs proprioception")
    if profile is not None and profile.fails(kind):
        return [noop(subtask)] * chunk_len
    if proprio["activity"] == subtask:
        if proprio["done"]:
            return [noop(subtask)] * chunk_len
        step, micro = proprio["progress"], proprio["micro"]
    else:
        step, micro = 0, 0
    spt = proprio["steps_per_tick"]
    plan = cls.plan(kind, slots)
    chunk: list[Action] = []
    while len(chunk) < chunk_len and step < len(plan):
        verb, arg = plan[step]
        chunk.extend([Action(subtask, verb, arg)] * (spt - micro))
        step, micro = step + 1, 0
    chunk = chunk[:chunk_len]
    chunk.extend([noop(subtask)] * (chunk_len - len(chunk)))
    return chunk


class ScriptedLL:
    def __init__(self, profile: Optional[FailureProfile] = None):
        self.profile = profile or FailureProfile()

    def __call__(self, subtask: str, obs: Observation, chunk_len: int) -> list[Action]:
        return scripted_ll(subtask, obs, chunk_len, self.profile)


def make_ll(p: float = 0.0, seed: int = 0, max_consecutive: int = 3) -> ScriptedLL:
    return ScriptedLL(FailureProfile(p=p, max_consecutive=max_consecutive, seed=seed))


__all__ = [
    "FailureProfile",
    "HLContext",
    "HLDecision",
    "HLPolicy",
    "InsufficientInformation",
    "KEY_EVENTS",
    "MemorylessHL",
    "NoisyNominator",
    "OracleHL",
    "PolicyError",
    "ScriptedLL",
    "ShortHistoryHL",
    "TextMemoryHL",
    "UnknownSubtask",
    "counting_requests",
    "decide",
    "make_hl",
    "make_ll",
    "memoryless_hl",
    "nominate",
    "noisy_nominator",
    "oracle_hl",
    "scripted_ll",
    "search_target",
    "short_history_hl",
    "text_memory_hl",
]
