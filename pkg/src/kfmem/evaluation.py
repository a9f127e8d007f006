"""Offline subtask-prediction metrics and per-task score tables."""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

DEFAULT_BOUNDARY_W = 4


class LengthMismatch(ValueError):
    pass


class EmptyTrace(ValueError):
    pass


class NoTransitions(ValueError):
    pass


@dataclass(frozen=True)
class BoundarySpec:
    """Half-width ``w`` in ticks of the window around each transition; ``math.inf`` covers everything."""

    w: float = DEFAULT_BOUNDARY_W

    def __post_init__(self):
        if self.w < 0:
            raise ValueError("boundary half-width must be >= 0")


def _check(pred: Sequence[str], gt: Sequence[str]) -> None:
    if len(pred) != len(gt):
        raise LengthMismatch(f"{len(pred)} predictions for {len(gt)} ground-truth ticks")
    if not gt:
        raise EmptyTrace("empty trace")


def trajectory_accuracy(pred: Sequence[str], gt: Sequence[str]) -> float:
    _check(pred, gt)
    return sum(p == g for p, g in zip(pred, gt)) / len(gt)


def transitions(gt: Sequence[str]) -> list[int]:
    """Ticks at which the ground-truth subtask changes (first tick of the new one)."""
    return [i for i in range(1, len(gt)) if gt[i] != gt[i - 1]]


def boundary_ticks(gt: Sequence[str], w: float) -> list[int]:
    """Union of ``[tau - w, tau + w]`` over all transitions, clamped to the trace."""
    taus = transitions(gt)
    if not taus:
        raise NoTransitions("ground truth never changes subtask")
    n = len(gt)
    if math.isinf(w):
        return list(range(n))
    w = int(w)
    keep = [False] * n
    for tau in taus:
        for i in range(max(0, tau - w), min(n - 1, tau + w) + 1):
            keep[i] = True
    return [i for i in range(n) if keep[i]]


def boundary_accuracy(pred: Sequence[str], gt: Sequence[str], spec: BoundarySpec | float = BoundarySpec()) -> float:
    _check(pred, gt)
    w = spec.w if isinstance(spec, BoundarySpec) else spec
    ticks = boundary_ticks(gt, w)
    return sum(pred[i] == gt[i] for i in ticks) / len(ticks)


def offline_traces(log) -> tuple[list[str], list[str]]:
    """``(predicted, executed)`` labels per high-level tick from a run with a shadow policy.

    The executed label at a tick is the one the driving policy committed, i.e.
    the subtask the low level carries out next.
    """
    pred = [r.payload["subtask"] for r in log.of("ShadowDecision")]
    gt = [r.payload["subtask"] for r in log.of("HLDecision")]
    if not pred:
        raise EmptyTrace("log has no shadow decisions")
    return pred, gt


def load_episodes(paths: Iterable, method: Optional[str] = None) -> list[dict]:
    """Read episode logs; ``method`` overrides the policy name stored in each header."""
    from .orchestrator import EpisodeLog

    out = []
    for path in paths:
        log = EpisodeLog.load(path)
        if not log.of("EpisodeScore"):
            raise ValueError(f"{path}: log has no final score")
        out.append({"method": method or log.header.get("hl", "?"), "score": log.final["score"], "log": log})
    return out


def offline_accuracy(episodes: Iterable[dict], w: float = DEFAULT_BOUNDARY_W) -> dict:
    """Per ``shadow-policy/task`` mean trajectory and boundary accuracy over logs carrying shadow decisions."""
    acc: dict = {}
    for ep in episodes:
        log = ep.get("log")
        if log is None or not log.of("ShadowDecision"):
            continue
        pred, gt = offline_traces(log)
        key = f"{log.header.get('shadow') or ep['method']}/{ep['score']['task']}"
        traj = trajectory_accuracy(pred, gt)
        try:
            bnd = boundary_accuracy(pred, gt, w)
        except NoTransitions:
            bnd = traj
        acc.setdefault(key, []).append((traj, bnd))
    return {k: (sum(a for a, _ in v) / len(v), sum(b for _, b in v) / len(v)) for k, v in acc.items()}


# -- score tables --------------------------------------------------------------

COLUMNS = (
    ("retrieved", "search", "# times object retrieved"),
    ("optimal_path", "search", "# times used optimal path"),
    ("wrong_scoops", "counting", "# wrong scoops"),
    ("dust_bottom", "dust", "Dust bottom shelf"),
    ("dust_top", "dust", "Dust top shelf"),
    ("replace_bottom", "dust", "Replace bottom object"),
    ("replace_top", "dust", "Replace top object"),
)


def report(episodes: Iterable[dict]) -> "OrderedDict[str, dict]":
    """Sum per-episode score components by method.

    Each episode is ``{"method": str, "score": <TaskScore dict>}``; the result
    maps method to column sums plus per-task episode counts.  Nothing is
    normalized.
    """
    rows: "OrderedDict[str, dict]" = OrderedDict()
    for ep in episodes:
        method, score = ep["method"], ep["score"]
        row = rows.setdefault(method, {"episodes": {}, **{c: None for c, _, _ in COLUMNS}})
        task = score["task"]
        row["episodes"][task] = row["episodes"].get(task, 0) + 1
        for col, col_task, _ in COLUMNS:
            if col_task == task:
                row[col] = (row[col] or 0) + int(score["components"][col])
    return rows


def format_table(rows: "OrderedDict[str, dict]", boundary_w: Optional[float] = None, accuracy: Optional[dict] = None) -> str:
    """Aligned text table in the same column order as :data:`COLUMNS`."""
    head = ["Method"] + [h for _, _, h in COLUMNS]
    body = []
    for method, row in rows.items():
        body.append([method] + ["-" if row[c] is None else str(row[c]) for c, _, _ in COLUMNS])
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    lines = ["  ".join(cell.ljust(wd) if i == 0 else cell.rjust(wd) for i, (cell, wd) in enumerate(zip(r, widths)))
             for r in [head] + body]
    lines.insert(1, "  ".join("-" * wd for wd in widths))
    if accuracy:
        lines.append("")
        lines.append(f"offline accuracy (boundary half-width {boundary_w} ticks)")
        for key, (traj, bnd) in sorted(accuracy.items()):
            lines.append(f"  {key:<24} trajectory {traj:.3f}  boundary {bnd:.3f}")
    return "\n".join(lines) + "\n"


def report_json(rows, boundary_w=None, accuracy=None) -> str:
    out = {"boundary_w": boundary_w, "rows": rows}
    if accuracy:
        out["accuracy"] = {k: {"trajectory": a, "boundary": b} for k, (a, b) in accuracy.items()}
    return json.dumps(out, indent=2, sort_keys=True) + "\n"
