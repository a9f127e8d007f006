"""Dual-rate closed-loop runner on a virtual clock.

Three periodic producers share one event heap: the observer samples a frame
into the queue, the high-level tick turns the recent window plus remembered
keyframes into a subtask and nominations, and the low-level tick reads the
latched subtask and executes the head of an action chunk.  Events at the same
timestamp fire observer first, then high level, then low level; within one
kind, in scheduling order.

Everything that happens is appended to an :class:`EpisodeLog`, which can be
re-run from its header or replayed action by action against a fresh world.
"""

from __future__ import annotations

import dataclasses
import heapq
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Union

from . import memory as mem
from . import simenv
from .policies import HLContext, HLPolicy, PolicyError, make_hl, make_ll
from .simenv import Action, Observation, WorldState

OBS, HL, LL = 0, 1, 2


class EmptyWindow(PolicyError):
    pass


class NoSubtaskYet(RuntimeError):
    pass


class TickPolicyError(PolicyError):
    """A policy raised; carries the frame index at which it happened."""

    def __init__(self, tick: int, cause: BaseException):
        super().__init__(f"policy failed at tick {tick}: {cause!r}")
        self.tick = tick
        self.cause = cause


@dataclass(frozen=True)
class RunConfig:
    """Rates, chunking and memory sizes.

    ``max_ticks`` caps the number of observation frames.  The world's
    micro-steps per tick equal ``open_loop_exec`` so one low-level tick
    advances one skill step when nothing fails.
    """

    hl_period_ms: int = 1000
    ll_period_ms: int = 500
    obs_period_ms: int = 500
    chunk_len: int = 15
    open_loop_exec: int = 8
    N: int = mem.DEFAULT_WINDOW
    d: int = mem.DEFAULT_MERGE_DISTANCE
    cap: int = mem.DEFAULT_CAP
    seed: int = 0
    max_ticks: int = 600

    def __post_init__(self):
        if min(self.hl_period_ms, self.ll_period_ms, self.obs_period_ms) <= 0:
            raise ValueError("all periods must be positive")
        if not 1 <= self.open_loop_exec <= self.chunk_len:
            raise ValueError("need 1 <= open_loop_exec <= chunk_len")
        if self.max_ticks < 1:
            raise ValueError("max_ticks must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def lockstep(cls, **kw) -> "RunConfig":
        """Every producer at the same period, whole chunk executed."""
        base = dict(hl_period_ms=500, ll_period_ms=500, obs_period_ms=500, chunk_len=8, open_loop_exec=8)
        base.update(kw)
        return cls(**base)


class VirtualClock:
    """Event heap ordered by ``(time, kind priority, insertion sequence)``."""

    def __init__(self):
        self.now = 0
        self._heap: list[tuple[int, int, int]] = []
        self._seq = 0

    def schedule(self, t: int, kind: int) -> None:
        if t < self.now:
            raise ValueError("cannot schedule in the past")
        heapq.heappush(self._heap, (t, kind, self._seq))
        self._seq += 1

    def pop(self) -> tuple[int, int]:
        t, kind, _ = heapq.heappop(self._heap)
        self.now = t
        return t, kind

    def __bool__(self):
        return bool(self._heap)


class WallClock(VirtualClock):
    """Same schedule, but each event waits for its wall-clock moment. Demo only."""

    def __init__(self, speed: float = 1.0):
        super().__init__()
        self.speed = speed
        self._t0 = time.monotonic()

    def pop(self) -> tuple[int, int]:
        t, kind = super().pop()
        delay = self._t0 + t / 1000.0 / self.speed - time.monotonic()
        if delay > 0:
            time.sleep(delay)
        return t, kind


class ObservationQueue:
    """Frames in sampling order; hands out the newest ``n`` as a window."""

    def __init__(self, n: int):
        self.n = n
        self.frames: list[Observation] = []

    def push(self, obs: Observation) -> None:
        if self.frames and obs.index <= self.frames[-1].index:
            raise ValueError("frame indices must increase")
        self.frames.append(obs)

    def window(self) -> tuple[Observation, ...]:
        return tuple(self.frames[-self.n:])

    def __getitem__(self, index: int) -> Observation:
        return self.frames[index]

    def __len__(self):
        return len(self.frames)

    @property
    def tick(self) -> int:
        return self.frames[-1].index


@dataclass
class SubtaskLatch:
    current: Optional[str] = None
    set_at: int = -1

    def commit(self, label: str, tick: int) -> None:
        self.current, self.set_at = label, tick

    def read(self) -> tuple[str, int]:
        if self.current is None:
            raise NoSubtaskYet("low-level tick before any subtask was committed")
        return self.current, self.set_at


@dataclass(frozen=True)
class Record:
    t_ms: int
    kind: str
    payload: dict

    def to_json(self) -> str:
        return json.dumps({"t_ms": self.t_ms, "kind": self.kind, "payload": self.payload}, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "Record":
        d = json.loads(line)
        return cls(int(d["t_ms"]), d["kind"], d["payload"])


@dataclass
class EpisodeLog:
    records: list

    def __init__(self, records: Optional[Iterable[Record]] = None):
        self.records = list(records or [])

    def add(self, t_ms: int, kind: str, **payload) -> Record:
        r = Record(t_ms, kind, payload)
        self.records.append(r)
        return r

    def of(self, kind: str) -> list[Record]:
        return [r for r in self.records if r.kind == kind]

    @property
    def header(self) -> dict:
        return self.records[0].payload

    @property
    def final(self) -> dict:
        return self.of("EpisodeScore")[-1].payload

    def dumps(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    @classmethod
    def loads(cls, text: str) -> "EpisodeLog":
        return cls(Record.from_json(line) for line in text.splitlines() if line.strip())

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "EpisodeLog":
        return cls.loads(Path(path).read_text())


@dataclass
class _Run:
    """Mutable loop state for one episode."""

    env: WorldState
    cfg: RunConfig
    queue: ObservationQueue
    memory: mem.MemoryState
    latch: SubtaskLatch
    log: EpisodeLog
    text_memory: list
    evicted: set


def hl_tick(now: int, queue: ObservationQueue, memory_state: mem.MemoryState, hl_policy, instruction: str,
            text_memory: Optional[Iterable[str]] = None):
    """One high-level step.

    Returns:
        ``(decision, batch, new_memory, context, selected)``.
    """
    if len(queue) == 0:
        raise EmptyWindow(f"no frames at {now} ms")
    tick = queue.tick
    window = queue.window()
    sel = mem.selected_keyframes(memory_state, tick)
    ctx = HLContext(window, tuple(queue[i] for i in sel.indices), instruction,
                    tuple(text_memory) if text_memory is not None else None)
    try:
        dec = hl_policy(ctx)
    except Exception as e:  # policy code is foreign; report where it broke
        raise TickPolicyError(tick, e) from e
    batch = mem.NominationBatch.from_positions(tick, dec.nominations, len(window))
    return dec, batch, mem.ingest(memory_state, batch), ctx, sel


def ll_tick(latch: SubtaskLatch, obs: Observation, ll_policy, cfg: RunConfig) -> tuple[str, int, list[Action]]:
    """Chunk for the latched subtask; the caller executes the first ``open_loop_exec``."""
    label, set_at = latch.read()
    chunk = ll_policy(label, obs, cfg.chunk_len)
    if len(chunk) != cfg.chunk_len:
        raise PolicyError(f"chunk of {len(chunk)} actions, expected {cfg.chunk_len}")
    return label, set_at, chunk


def _on_obs(run: _Run, t: int) -> bool:
    k = len(run.queue)
    if k >= run.cfg.max_ticks:
        run.log.add(t, "TimeoutAtMaxTicks", frames=k)
        return False
    obs = run.env.observe(k)
    run.queue.push(obs)
    run.log.add(t, "ObservationSampled", index=k, ref=obs.ref(), scene=obs.scene)
    return True


def _on_hl(run: _Run, t: int, policy) -> None:
    instruction = run.env.instruction()
    dec, batch, run.memory, ctx, sel = hl_tick(t, run.queue, run.memory, policy, instruction, run.text_memory)
    tick = batch.tick
    run.log.add(
        t,
        "HLDecision",
        tick=tick,
        instruction=instruction,
        window=[o.index for o in ctx.window],
        keyframes=list(sel.indices),
        subtask=dec.subtask,
        nominations=list(dec.nominations),
        abs_indices=list(batch.abs_indices),
        insufficient=dec.insufficient,
    )
    fresh = [i for i in sel.evicted if i not in run.evicted]
    if fresh:
        run.evicted.update(fresh)
        run.log.add(t, "CapEviction", tick=tick, evicted=fresh, kept=list(sel.indices))
    run.latch.commit(dec.subtask, tick)
    if not run.text_memory or run.text_memory[-1] != dec.subtask:
        run.text_memory.append(dec.subtask)
    run.log.add(t, "SubtaskCommitted", subtask=dec.subtask, set_at=tick)


def _on_ll(run: _Run, t: int, policy) -> None:
    k = run.queue.tick
    obs = run.env.peek(k, proprio=True)
    try:
        label, set_at, chunk = ll_tick(run.latch, obs, policy, run.cfg)
    except (NoSubtaskYet, PolicyError):
        raise
    except Exception as e:
        raise TickPolicyError(k, e) from e
    run.log.add(t, "LLChunkEmitted", subtask=label, set_at=set_at, tick=k,
                chunk_len=len(chunk), noop=all(a.verb == "noop" for a in chunk))
    accepted = illegal = 0
    for a in chunk[: run.cfg.open_loop_exec]:
        if run.env.terminal:
            break
        ok = run.env.apply(a)
        accepted += ok
        illegal += not ok
        run.log.add(t, "EnvTransition", action=a.to_dict(), ok=ok, error=run.env.last_error)
    run.log.add(t, "ActionExecuted", tick=k, accepted=accepted, illegal=illegal, terminal=run.env.terminal)


def run_episode(env: WorldState, hl_policy, ll_policy, cfg: RunConfig, *, clock: Optional[VirtualClock] = None,
                meta: Optional[dict] = None, shadow: Optional[HLPolicy] = None) -> EpisodeLog:
    """Run one closed-loop episode until the world is terminal or the frame cap is hit.

    Args:
        env: a freshly reset world; it is mutated in place.
        hl_policy: callable ``HLContext -> HLDecision``.
        ll_policy: callable ``(label, obs_with_proprio, chunk_len) -> list[Action]``.
        cfg: rates and sizes.
        clock: defaults to a :class:`VirtualClock`.
        meta: extra header fields (used by :func:`run` to make logs re-runnable).
        shadow: optional second high-level policy queried on the same context
            whose answers are only logged, for offline accuracy traces.
    """
    clock = clock or VirtualClock()
    log = EpisodeLog()
    header = {"task": env.task, "seed": env.seed, "config": cfg.to_dict(), "initial_state": env.to_dict()}
    header.update(meta or {})
    log.add(0, "EpisodeStart", **header)
    run = _Run(env, cfg, ObservationQueue(cfg.N), mem.MemoryState(d=cfg.d, N=cfg.N, cap=cfg.cap),
               SubtaskLatch(), log, [], set())

    for kind in (OBS, HL, LL):
        clock.schedule(0, kind)
    period = {OBS: cfg.obs_period_ms, HL: cfg.hl_period_ms, LL: cfg.ll_period_ms}
    timed_out = False
    while clock and not env.terminal:
        t, kind = clock.pop()
        if kind == OBS:
            if not _on_obs(run, t):
                timed_out = True
                break
        elif kind == HL:
            if shadow is not None:
                _shadow(run, t, shadow)
            _on_hl(run, t, hl_policy)
        else:
            _on_ll(run, t, ll_policy)
        clock.schedule(t + period[kind], kind)

    score = simenv.score(env.task, env, log) if (env.terminal or timed_out) else None
    log.add(clock.now, "EpisodeScore", score=score.to_dict() if score else None, terminal=env.terminal,
            timed_out=timed_out, final_digest=env.digest(), final_state=env.to_dict(), frames=len(run.queue))
    return log


def _shadow(run: _Run, t: int, policy: HLPolicy) -> None:
    sel = mem.selected_keyframes(run.memory, run.queue.tick)
    ctx = HLContext(run.queue.window(), tuple(run.queue[i] for i in sel.indices), run.env.instruction(),
                    tuple(run.text_memory))
    dec = policy(ctx)
    run.log.add(t, "ShadowDecision", tick=run.queue.tick, subtask=dec.subtask, nominations=list(dec.nominations))


# -- convenience entry points used by the CLI and by rerun ---------------------


def build_policies(hl: str, ll_fail: float, seed: int, max_consecutive: int = 3):
    return make_hl(hl, seed=seed), make_ll(ll_fail, seed=seed, max_consecutive=max_consecutive)


def run(task: str, seed: int, hl: str = "oracle", ll_fail: float = 0.0, cfg: Optional[RunConfig] = None,
        hidden: Optional[dict] = None, shadow: Optional[str] = None) -> EpisodeLog:
    """Reset ``task`` with ``seed`` and run it; the header records how to redo it."""
    cfg = cfg or RunConfig(seed=seed)
    env, _ = simenv.reset(task, seed, steps_per_tick=cfg.open_loop_exec, hidden=hidden)
    hl_policy, ll_policy = build_policies(hl, ll_fail, seed)
    meta = {"hl": hl, "ll_fail": ll_fail, "shadow": shadow}
    return run_episode(env, hl_policy, ll_policy, cfg, meta=meta, shadow=make_hl(shadow) if shadow else None)


def rerun(log: EpisodeLog) -> EpisodeLog:
    """Run the episode again from the log header alone."""
    h = log.header
    cfg = RunConfig.from_dict(h["config"])
    env = simenv.from_dict(h["initial_state"])
    hl_policy, ll_policy = build_policies(h["hl"], h["ll_fail"], h["seed"])
    meta = {"hl": h["hl"], "ll_fail": h["ll_fail"], "shadow": h.get("shadow")}
    shadow = make_hl(h["shadow"]) if h.get("shadow") else None
    return run_episode(env, hl_policy, ll_policy, cfg, meta=meta, shadow=shadow)


@dataclass
class ReplayReport:
    identical: bool
    expected_digest: str
    actual_digest: str
    frame_mismatches: list
    transition_mismatches: list
    state_diff: list

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def replay(log: EpisodeLog) -> ReplayReport:
    """Re-execute every logged action against a fresh world and diff the result.

    Frames are re-sampled at the logged points so their content hashes can be
    checked too.
    """
    h = log.header
    env = simenv.from_dict(h["initial_state"])
    frames, transitions = [], []
    for r in log.records:
        if r.kind == "ObservationSampled":
            obs = env.observe(r.payload["index"])
            if obs.ref() != r.payload["ref"]:
                frames.append(r.payload["index"])
        elif r.kind == "EnvTransition":
            ok = env.apply(Action.from_dict(r.payload["action"]))
            if ok != r.payload["ok"]:
                transitions.append(len(transitions))
    final = log.final
    expected = final["final_digest"]
    actual = env.digest()
    got = env.to_dict()
    diff = sorted(k for k in set(got) | set(final["final_state"]) if got.get(k) != final["final_state"].get(k))
    same = expected == actual and not frames and not transitions
    return ReplayReport(same, expected, actual, frames, transitions, diff)


def lockstep_reference(env: WorldState, hl_policy, ll_policy, cfg: RunConfig) -> list[str]:
    """Plain loop: observe, decide, act, one frame at a time. Returns decided labels."""
    frames: list[Observation] = []
    memory = mem.MemoryState(d=cfg.d, N=cfg.N, cap=cfg.cap)
    text: list[str] = []
    labels = []
    k = 0
    while not env.terminal and k < cfg.max_ticks:
        frames.append(env.observe(k))
        window = tuple(frames[-cfg.N:])
        sel = mem.selected_keyframes(memory, k)
        dec = hl_policy(HLContext(window, tuple(frames[i] for i in sel.indices), env.instruction(), tuple(text)))
        memory = mem.ingest(memory, mem.NominationBatch.from_positions(k, dec.nominations, len(window)))
        if not text or text[-1] != dec.subtask:
            text.append(dec.subtask)
        labels.append(dec.subtask)
        chunk = ll_policy(dec.subtask, env.peek(k, proprio=True), cfg.chunk_len)
        for a in chunk[: cfg.open_loop_exec]:
            if env.terminal:
                break
            env.apply(a)
        k += 1
    return labels
