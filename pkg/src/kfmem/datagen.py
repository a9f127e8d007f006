"""Demonstrations, keyframe annotation and training-record export.

A demonstration is a lockstep oracle run (one decision per frame, no
low-level failures) stored as frames plus the subtask label executed at each
frame.  Labels are cut into segments; a per-subtask rule picks the first,
last or no frame of each segment as a ground-truth keyframe.  Every frame
then becomes one chat-style training record whose answer names the subtask
and the window positions of ground-truth keyframes.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import jsonschema

from . import memory as mem
from . import orchestrator as orch
from .simenv import Observation, search


class UncoveredLabel(KeyError):
    pass


class Selector(enum.Enum):
    FIRST = "first"
    LAST = "last"
    NONE = "none"


@dataclass(frozen=True)
class AnnotationRule:
    """``pattern`` is a subtask template with ``<SLOT>`` placeholders."""

    pattern: str
    selector: Selector

    @property
    def regex(self) -> re.Pattern:
        parts = re.split(r"(<[A-Z]+>)", self.pattern)
        body = "".join("(.+)" if re.fullmatch(r"<[A-Z]+>", p) else re.escape(p) for p in parts)
        return re.compile(body + r"\Z")

    def matches(self, label: str) -> bool:
        return self.regex.match(label) is not None


F, L, X = Selector.FIRST, Selector.LAST, Selector.NONE

RULES: dict[str, tuple[AnnotationRule, ...]] = {
    "search": (
        AnnotationRule("look inside the <LOCATION> bin", L),
        AnnotationRule("take the <OBJECT> from the <LOCATION> bin and place it in the white bin", X),
    ),
    "counting": (
        AnnotationRule("pick up the scooper", X),
        AnnotationRule("place a scoop of <OBJECT> in the <COLOR> bowl", L),
        AnnotationRule("reset scooper position", X),
        AnnotationRule("drop the scooper", X),
    ),
    "dust": (
        AnnotationRule("remove the object on the bottom shelf", L),
        AnnotationRule("remove the object on the top shelf", L),
        AnnotationRule("pick up duster", X),
        AnnotationRule("dust bottom shelf", L),
        AnnotationRule("reset duster", X),
        AnnotationRule("dust top shelf", L),
        AnnotationRule("put down duster", X),
        AnnotationRule("place the <OBJECT> on the bottom shelf", L),
        AnnotationRule("place the <OBJECT> on the top shelf", L),
    ),
}


def rule_for(label: str, rules: Sequence[AnnotationRule]) -> AnnotationRule:
    hits = [r for r in rules if r.matches(label)]
    if len(hits) != 1:
        raise UncoveredLabel(f"{label!r} matches {len(hits)} rules")
    return hits[0]


@dataclass(frozen=True)
class SubtaskSegment:
    label: str
    start: int
    end: int  # inclusive


def segments(labels: Sequence[str]) -> list[SubtaskSegment]:
    """Maximal runs of equal labels."""
    out: list[SubtaskSegment] = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            out.append(SubtaskSegment(labels[start], start, i - 1))
            start = i
    return out


@dataclass
class Demonstration:
    task: str
    seed: int
    frames: list  # Observation, index == position
    labels: list  # subtask executed at each frame
    instructions: list  # instruction in force at each frame
    log: orch.EpisodeLog

    @property
    def segments(self) -> list[SubtaskSegment]:
        return segments(self.labels)

    @property
    def score(self) -> dict:
        return self.log.final["score"]


def generate_demo(task: str, seed: int, hidden: Optional[dict] = None, max_ticks: int = 600) -> Demonstration:
    """Lockstep oracle run with a perfect low level; one labelled frame per tick."""
    cfg = orch.RunConfig.lockstep(seed=seed, max_ticks=max_ticks)
    log = orch.run(task, seed, "oracle", 0.0, cfg=cfg, hidden=hidden)
    frames = [Observation(r.payload["index"], r.payload["scene"]) for r in log.of("ObservationSampled")]
    decisions = log.of("HLDecision")
    labels = [r.payload["subtask"] for r in decisions]
    instructions = [r.payload["instruction"] for r in decisions]
    if len(labels) != len(frames):
        raise RuntimeError("lockstep demo must decide once per frame")
    return Demonstration(task, seed, frames, labels, instructions, log)


def annotate(demo: Demonstration, rules: Optional[Sequence[AnnotationRule]] = None) -> list[int]:
    """Ground-truth keyframe indices: at most one per segment, ascending."""
    rules = RULES[demo.task] if rules is None else rules
    out = []
    for seg in demo.segments:
        sel = rule_for(seg.label, rules).selector
        if sel is Selector.FIRST:
            out.append(seg.start)
        elif sel is Selector.LAST:
            out.append(seg.end)
    return out


# -- prompt records ------------------------------------------------------------

SYSTEM_TEXT = (
    "You are a robot program that predicts actions. The video input from the egocentric camera shows the most "
    "recent actions the robot has executed. The images are selected frames of particular importance from all the "
    "actions the robot has executed so far. Based on these, output the current subtask the robot should execute "
    "and nothing else.\n\nReturn a JSON with:\n- current_subtask: the action that should be executed at the "
    "current timestep\n- keyframe_positions: list of frame positions (1-indexed) from the video input where "
    "actions change\n"
)
CAMERA_PREFIX = {"search": "The robot's wrist and third-person camera feed is shown below. "}
MEMORY_HEADER = "\nHere are the selected frames from the entirety of the full video that are of particular importance:"
VIDEO_HEADER = "\nHere is a video of the most recent actions the robot has executed:"


def user_text(task: str, instruction: str) -> str:
    return f"Task: {CAMERA_PREFIX.get(task, '')}What subtask should the robot execute to {instruction}?{MEMORY_HEADER}"


@dataclass(frozen=True)
class PromptRecord:
    id: str
    task: str
    seed: int
    tick: int
    system_text: str
    user_text: str
    keyframe_refs: tuple[str, ...]
    video_refs: tuple[str, ...]
    assistant_json: dict

    def assistant_text(self) -> str:
        return json.dumps({"current_subtask": self.assistant_json["current_subtask"],
                           "keyframe_positions": list(self.assistant_json["keyframe_positions"])})

    def messages(self) -> list:
        user = [{"text": self.user_text}]
        user += [{"image": r} for r in self.keyframe_refs]
        user += [{"text": VIDEO_HEADER}, {"video": list(self.video_refs)}]
        return [
            {"role": "system", "content": [{"text": self.system_text}]},
            {"role": "user", "content": user},
            {"role": "assistant", "content": [{"text": self.assistant_text()}]},
        ]

    def to_dict(self) -> dict:
        return {"id": self.id, "task": self.task, "seed": self.seed, "tick": self.tick, "messages": self.messages()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "PromptRecord":
        system, user, assistant = d["messages"]
        content = user["content"]
        images = tuple(c["image"] for c in content if "image" in c)
        video = tuple(next(c["video"] for c in content if "video" in c))
        return cls(d["id"], d["task"], d["seed"], d["tick"], system["content"][0]["text"], content[0]["text"],
                   images, video, json.loads(assistant["content"][0]["text"]))


def export_prompts(demo: Demonstration, gt_keyframes: Iterable[int], N: int = mem.DEFAULT_WINDOW,
                   cap: int = mem.DEFAULT_CAP) -> list[PromptRecord]:
    """One record per frame.

    Keyframe images are ground-truth frames that have left the window; the
    answer lists ground-truth frames still inside it, as 1-indexed positions.
    """
    gt = sorted(set(gt_keyframes))
    refs = [f.ref() for f in demo.frames]
    out = []
    for t in range(len(demo.frames)):
        lo, hi = mem.window_bounds(t, N)
        past = mem.enforce_cap([k for k in gt if k < lo], cap).indices
        inside = [k - lo + 1 for k in gt if lo <= k <= hi]
        out.append(PromptRecord(
            id=f"{demo.task}-{demo.seed}-{t:04d}",
            task=demo.task,
            seed=demo.seed,
            tick=t,
            system_text=SYSTEM_TEXT,
            user_text=user_text(demo.task, demo.instructions[t]),
            keyframe_refs=tuple(refs[k] for k in past),
            video_refs=tuple(refs[lo: hi + 1]),
            assistant_json={"current_subtask": demo.labels[t], "keyframe_positions": inside},
        ))
    return out


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    return json.loads(resources.files("kfmem").joinpath("schemas", name).read_text())


@lru_cache(maxsize=None)
def _validator(name: str):
    schema = load_schema(name)
    cls = jsonschema.validators.validator_for(schema)
    cls.check_schema(schema)
    return cls(schema)


def validate_record(d: dict) -> None:
    """Raise ``jsonschema.ValidationError`` unless ``d`` is a well-formed record."""
    _validator("prompt_record.schema.json").validate(d)
    payload = json.loads(d["messages"][2]["content"][0]["text"])
    _validator("assistant_payload.schema.json").validate(payload)
    video = next(c["video"] for c in d["messages"][1]["content"] if "video" in c)
    bad = [p for p in payload["keyframe_positions"] if p > len(video)]
    if bad:
        raise jsonschema.ValidationError(f"positions {bad} beyond video of {len(video)} frames")


def replay_nominations(gt_keyframes: Sequence[int], n_frames: int, d: int = mem.DEFAULT_MERGE_DISTANCE,
                       N: int = mem.DEFAULT_WINDOW, cap: int = mem.DEFAULT_CAP) -> list[int]:
    """Feed ground-truth nominations through memory; return what it emits after the last frame leaves the window."""
    gt = sorted(set(gt_keyframes))
    state = mem.MemoryState(d=d, N=N, cap=cap)
    for t in range(n_frames):
        lo, hi = mem.window_bounds(t, N)
        state = mem.ingest(state, mem.NominationBatch.from_indices(t, [k for k in gt if lo <= k <= hi], hi - lo + 1))
    end = n_frames - 1 + N
    return list(mem.selected_keyframes(state, end).indices)


# -- batch writing -------------------------------------------------------------


def write_dataset(task: str, seeds: Iterable[int], out: Union[str, Path], N: int = mem.DEFAULT_WINDOW) -> dict:
    """Write ``prompts.jsonl``, ``frames.jsonl`` and the schemas under ``out``.

    Returns a summary with per-demo scores and record counts.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    n_records = 0
    demos = []
    with open(out / "prompts.jsonl", "w") as fp, open(out / "frames.jsonl", "w") as ff:
        for seed in seeds:
            demo = generate_demo(task, seed)
            gt = annotate(demo)
            for rec in export_prompts(demo, gt, N):
                d = rec.to_dict()
                validate_record(d)
                fp.write(json.dumps(d, ensure_ascii=False) + "\n")
                n_records += 1
            for f in demo.frames:
                ff.write(json.dumps({"ref": f.ref(), **f.to_dict()}, sort_keys=True) + "\n")
            demos.append({"seed": seed, "frames": len(demo.frames), "keyframes": gt, "score": demo.score})
    for name in ("prompt_record.schema.json", "assistant_payload.schema.json"):
        (out / name).write_text(json.dumps(load_schema(name), indent=2) + "\n")
    return {"task": task, "records": n_records, "demos": demos}


__all__ = [
    "AnnotationRule",
    "Demonstration",
    "PromptRecord",
    "RULES",
    "SYSTEM_TEXT",
    "Selector",
    "SubtaskSegment",
    "UncoveredLabel",
    "annotate",
    "export_prompts",
    "generate_demo",
    "load_schema",
    "replay_nominations",
    "rule_for",
    "segments",
    "validate_record",
    "write_dataset",
]
