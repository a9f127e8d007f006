"""Command-line entry point: ``kfmem {run,eval,datagen,merge,replay}``.

Settings resolve as command-line flag, then ``--config`` JSON file, then
built-in default.  Commands that write outputs also write ``manifest.json``
next to them with everything needed to redo the command.

Exit codes: 0 success, 1 task failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import platform
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, datagen, kernels
from . import evaluation as ev
from . import orchestrator as orch
from . import policies as pol
from . import simenv
from . import weights as W

OK, TASK_FAILURE, USAGE = 0, 1, 2

DEFAULTS = {
    "task": None,
    "logs": None,
    "method": None,
    "pre": None,
    "ft": None,
    "seed": 0,
    "hl": "oracle",
    "ll_fail": 0.0,
    "shadow": None,
    "count": 1,
    "boundary_w": ev.DEFAULT_BOUNDARY_W,
    "alpha": W.MergeConfig().alpha,
    "out": None,
    **{k: v for k, v in orch.RunConfig().to_dict().items() if k != "seed"},
}
RUN_CONFIG_KEYS = {f.name for f in dataclasses.fields(orch.RunConfig)} - {"seed"}


class UsageError(Exception):
    pass


@dataclasses.dataclass
class RunManifest:
    command: str
    settings: dict
    seeds: list
    versions: dict
    outputs: list

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def write(self, out: Path, name: str = "manifest.json") -> Path:
        path = out / name
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def versions() -> dict:
    return {"kfmem": __version__, "kernels": kernels.BACKEND, "numpy": np.__version__,
            "python": platform.python_version()}


def resolve(args: argparse.Namespace, keys: Sequence[str]) -> dict:
    """Flags over config file over defaults, for the named settings."""
    cfg = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(cfg) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for k in keys:
        flag = getattr(args, k, None)
        out[k] = flag if flag is not None else cfg.get(k, DEFAULTS.get(k))
    return out


def run_config(s: dict, seed: int) -> orch.RunConfig:
    try:
        return orch.RunConfig(seed=seed, **{k: s[k] for k in RUN_CONFIG_KEYS if k in s})
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _need(s: dict, key: str) -> None:
    if s.get(key) is None:
        raise UsageError(f"--{key.replace('_', '-')} is required")


def _task(s: dict) -> str:
    _need(s, "task")
    if s["task"] not in simenv.TASKS:
        raise UsageError(f"unknown task {s['task']!r}; choose from {sorted(simenv.TASKS)}")
    return s["task"]


# -- subcommands ---------------------------------------------------------------


def cmd_run(args) -> int:
    s = resolve(args, ["task", "seed", "count", "hl", "ll_fail", "shadow", "out", *sorted(RUN_CONFIG_KEYS)])
    task = _task(s)
    for spec in filter(None, (s["hl"], s["shadow"])):
        try:
            pol.make_hl(spec)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    if not 0.0 <= s["ll_fail"] <= 1.0:
        raise UsageError("--ll-fail must be in [0, 1]")
    out = Path(s["out"] or "runs")
    out.mkdir(parents=True, exist_ok=True)
    seeds = list(range(s["seed"], s["seed"] + s["count"]))
    outputs, failed = [], 0
    for seed in seeds:
        log = orch.run(task, seed, s["hl"], s["ll_fail"], cfg=run_config(s, seed), shadow=s["shadow"])
        stem = out / f"{task}-{seed}"
        log.save(stem.with_suffix(".jsonl"))
        score = log.final["score"]
        stem.with_suffix(".score.json").write_text(json.dumps(score, sort_keys=True) + "\n")
        outputs += [str(stem.with_suffix(".jsonl")), str(stem.with_suffix(".score.json"))]
        failed += not score["perfect"]
        print(json.dumps({"seed": seed, **score}, sort_keys=True))
    RunManifest("run", s, seeds, versions(), outputs).write(out)
    return TASK_FAILURE if failed else OK


def cmd_replay(args) -> int:
    try:
        log = orch.EpisodeLog.load(args.log)
        rep = orch.replay(log)
    except (OSError, ValueError, KeyError, IndexError) as exc:
        print(f"replay: cannot use {args.log}: {exc}", file=sys.stderr)
        return TASK_FAILURE
    print("identical" if rep.identical else "different")
    if not rep.identical:
        print(json.dumps(rep.to_dict(), sort_keys=True))
    return OK if rep.identical else TASK_FAILURE


def cmd_eval(args) -> int:
    s = resolve(args, ["logs", "method", "boundary_w", "out"])
    _need(s, "logs")
    logs = Path(s["logs"])
    if not logs.is_dir():
        raise UsageError(f"--logs {logs} is not a directory")
    w = s["boundary_w"]
    if w is None or w < 0:
        raise UsageError("--boundary-w must be >= 0")
    try:
        episodes = ev.load_episodes(sorted(logs.glob("*.jsonl")), s["method"])
    except (ValueError, KeyError, IndexError) as exc:
        print(f"eval: {exc}", file=sys.stderr)
        return TASK_FAILURE
    rows = ev.report(episodes)
    acc = ev.offline_accuracy(episodes, w)
    text = ev.format_table(rows, w, acc)
    sys.stdout.write(text)
    if s["out"]:
        out = Path(s["out"])
        out.mkdir(parents=True, exist_ok=True)
        w_json = None if math.isinf(w) else w
        (out / "report.json").write_text(ev.report_json(rows, w_json, acc))
        (out / "report.txt").write_text(text)
        RunManifest("eval", {**s, "boundary_w": w_json}, [], versions(),
                    [str(out / "report.json"), str(out / "report.txt")]).write(out)
    return OK


def cmd_datagen(args) -> int:
    s = resolve(args, ["task", "seed", "count", "out", "N"])
    task = _task(s)
    _need(s, "out")
    out = Path(s["out"])
    seeds = list(range(s["seed"], s["seed"] + s["count"]))
    summary = datagen.write_dataset(task, seeds, out, s["N"])
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    names = ["prompts.jsonl", "frames.jsonl", "prompt_record.schema.json", "assistant_payload.schema.json",
             "summary.json"]
    RunManifest("datagen", s, seeds, versions(), [str(out / n) for n in names]).write(out)
    print(json.dumps({"task": task, "records": summary["records"], "demos": len(seeds)}))
    return OK if all(d["score"]["perfect"] for d in summary["demos"]) else TASK_FAILURE


def cmd_merge(args) -> int:
    s = resolve(args, ["pre", "ft", "alpha", "out"])
    for k in ("pre", "ft", "out"):
        _need(s, k)
    try:
        cfg = W.MergeConfig(float(s["alpha"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    try:
        merged = W.merge(W.load(s["pre"]), W.load(s["ft"]), cfg)
        W.save(merged, s["out"])
    except (W.SchemaMismatch, W.NonFiniteInput, W.CorruptFile, W.IoFailure) as exc:
        print(f"merge: {type(exc).__name__}: {exc}", file=sys.stderr)
        return TASK_FAILURE
    out = Path(s["out"])
    RunManifest("merge", s, [], versions(), [str(out)]).write(out.parent, out.name + ".manifest.json")
    print(json.dumps({"out": str(out), "entries": len(merged), "alpha": cfg.alpha}))
    return OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kfmem", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file of settings; flags override it")
        return sp

    r = common(sub.add_parser("run", help="run episodes and write logs and scores"))
    r.add_argument("--task", choices=sorted(simenv.TASKS))
    r.add_argument("--seed", type=int)
    r.add_argument("--count", type=int, help="number of consecutive seeds")
    r.add_argument("--hl", help="oracle | none | short | text | noisy:<j>")
    r.add_argument("--ll-fail", type=float, help="low-level failure probability per tick")
    r.add_argument("--shadow", help="extra high-level policy logged alongside, for offline accuracy")
    r.add_argument("--max-ticks", type=int)
    r.add_argument("--window", dest="N", type=int)
    r.add_argument("--merge-distance", dest="d", type=int)
    r.add_argument("--cap", type=int)
    r.add_argument("--out", help="output directory (default runs/)")
    r.set_defaults(func=cmd_run)

    e = common(sub.add_parser("eval", help="tabulate scores from a directory of episode logs"))
    e.add_argument("--logs")
    e.add_argument("--method", help="method name for every log (default: policy in each header)")
    e.add_argument("--boundary-w", type=float, help="half-width in ticks; 'inf' for the whole trace")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    g = common(sub.add_parser("datagen", help="generate annotated demos and prompt records"))
    g.add_argument("--task", choices=sorted(simenv.TASKS))
    g.add_argument("--seed", type=int, help="first seed")
    g.add_argument("--count", type=int)
    g.add_argument("--window", dest="N", type=int)
    g.add_argument("--out")
    g.set_defaults(func=cmd_datagen)

    m = common(sub.add_parser("merge", help="interpolate two weight maps"))
    m.add_argument("--pre")
    m.add_argument("--ft")
    m.add_argument("--alpha", type=float)
    m.add_argument("--out")
    m.set_defaults(func=cmd_merge)

    rp = sub.add_parser("replay", help="re-execute a log and compare")
    rp.add_argument("log")
    rp.set_defaults(func=cmd_replay, config=None)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"{parser.prog} {args.command}: {exc}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
