"""Streaming keyframe memory.

Nominated frame indices from every high-level tick are pooled into one sorted
multiset, grouped by 1D single linkage (consecutive indices at most ``d``
apart share a cluster) and each cluster is represented by its lower median.
Only representatives that have left the recent window are exposed.

Clusters whose largest member is below ``tick - N + 1 - d`` can never be
reached by a future nomination, so they are frozen and never re-linked.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import kernels

DEFAULT_MERGE_DISTANCE = 5
DEFAULT_WINDOW = 8
DEFAULT_CAP = 8


class PositionOutOfRange(ValueError):
    pass


class EmptyCluster(ValueError):
    pass


class NonMonotonicTick(ValueError):
    pass


def window_bounds(tick: int, n: int) -> tuple[int, int]:
    """Inclusive ``(first, last)`` frame indices of the recent window at ``tick``."""
    return max(0, tick - n + 1), tick


def rel_to_abs(tick: int, window_len: int, positions: Iterable[int]) -> list[int]:
    """Convert 1-indexed window positions to absolute frame indices.

    >>> rel_to_abs(10, 8, [1, 8])
    [3, 10]
    """
    out = []
    for p in positions:
        if not 1 <= p <= window_len:
            raise PositionOutOfRange(f"position {p} outside window of length {window_len}")
        out.append(tick - window_len + p)
    out.sort()
    return out


def abs_to_rel(tick: int, window_len: int, indices: Iterable[int]) -> list[int]:
    first = tick - window_len + 1
    out = []
    for i in indices:
        if not first <= i <= tick:
            raise PositionOutOfRange(f"frame {i} outside window [{first}, {tick}]")
        out.append(i - first + 1)
    out.sort()
    return out


@dataclass(frozen=True)
class Cluster:
    members: tuple[int, ...]
    frozen: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not self.members:
            raise EmptyCluster("cluster has no members")

    @property
    def median(self) -> int:
        return cluster_median(self)


def cluster_median(c: Cluster | Sequence[int]) -> int:
    """Lower median: sorted position ceil(k/2), 1-indexed."""
    members = c.members if isinstance(c, Cluster) else tuple(c)
    if not members:
        raise EmptyCluster("median of empty cluster")
    return members[(len(members) - 1) // 2]


def _split(values: Sequence[int], d: int, frozen: bool = False) -> list[Cluster]:
    starts = kernels.link_sorted(values, d)
    bounds = list(starts) + [len(values)]
    return [Cluster(tuple(values[bounds[j] : bounds[j + 1]]), frozen) for j in range(len(starts))]


def single_linkage(log: Iterable[int], d: int) -> list[Cluster]:
    """Batch clustering of a nomination log (any order, duplicates kept)."""
    if d < 0:
        raise ValueError("merge distance must be non-negative")
    values = sorted(int(v) for v in log)
    return _split(values, d)


@dataclass(frozen=True)
class NominationBatch:
    """Nominations produced by one high-level tick."""

    tick: int
    positions: tuple[int, ...]
    abs_indices: tuple[int, ...]

    @classmethod
    def from_positions(cls, tick: int, positions: Iterable[int], window_len: int) -> "NominationBatch":
        positions = tuple(positions)
        return cls(tick, positions, tuple(rel_to_abs(tick, window_len, positions)))

    @classmethod
    def from_indices(cls, tick: int, indices: Iterable[int], window_len: int) -> "NominationBatch":
        indices = sorted(indices)
        return cls(tick, tuple(abs_to_rel(tick, window_len, indices)), tuple(indices))


@dataclass(frozen=True)
class SelectedKeyframes:
    indices: tuple[int, ...] = ()
    evicted: tuple[int, ...] = ()

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)


def enforce_cap(k: SelectedKeyframes | Sequence[int], cap: int) -> SelectedKeyframes:
    """Keep the ``cap`` newest representatives; the dropped ones go to ``evicted``."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    indices = tuple(k.indices if isinstance(k, SelectedKeyframes) else k)
    prior = k.evicted if isinstance(k, SelectedKeyframes) else ()
    if len(indices) <= cap:
        return SelectedKeyframes(indices, prior)
    cut = len(indices) - cap
    return SelectedKeyframes(indices[cut:], prior + indices[:cut])


@dataclass(frozen=True)
class MemoryState:
    d: int = DEFAULT_MERGE_DISTANCE
    N: int = DEFAULT_WINDOW
    cap: int = DEFAULT_CAP
    frozen_clusters: tuple[Cluster, ...] = ()
    active_clusters: tuple[Cluster, ...] = ()
    frozen_medians: tuple[int, ...] = ()
    tick: int = -1

    def __post_init__(self):
        if self.d < 0 or self.N < 1 or self.cap < 1:
            raise ValueError(f"invalid memory config d={self.d} N={self.N} cap={self.cap}")

    @property
    def log(self) -> tuple[int, ...]:
        """The pooled nomination log, sorted with duplicates."""
        out: list[int] = []
        for c in self.frozen_clusters:
            out.extend(c.members)
        for c in self.active_clusters:
            out.extend(c.members)
        return tuple(out)

    @property
    def clusters(self) -> tuple[Cluster, ...]:
        return self.frozen_clusters + self.active_clusters

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "N": self.N,
            "cap": self.cap,
            "tick": self.tick,
            "frozen": [list(c.members) for c in self.frozen_clusters],
            "active": [list(c.members) for c in self.active_clusters],
        }


def ingest(state: MemoryState, batch: NominationBatch) -> MemoryState:
    """Fold one tick's nominations into the memory.

    Only the active tail is re-linked; frozen clusters are carried over as-is.
    """
    if batch.tick < state.tick:
        raise NonMonotonicTick(f"tick {batch.tick} after {state.tick}")
    lo, hi = window_bounds(batch.tick, state.N)
    new = sorted(batch.abs_indices)
    if new and (new[0] < lo or new[-1] > hi):
        raise PositionOutOfRange(f"nominations {new} outside window [{lo}, {hi}]")

    active = state.active_clusters
    if new:
        tail = [m for c in active for m in c.members]
        tail.extend(new)
        tail.sort()  # two sorted runs; timsort merges them in linear time
        active = tuple(_split(tail, state.d))

    threshold = batch.tick - state.N + 1 - state.d
    k = 0
    while k < len(active) and active[k].members[-1] < threshold:
        k += 1
    frozen, medians = state.frozen_clusters, state.frozen_medians
    if k:
        newly = tuple(Cluster(c.members, True) for c in active[:k])
        frozen = frozen + newly
        medians = medians + tuple(c.median for c in newly)
        active = active[k:]

    return MemoryState(
        d=state.d,
        N=state.N,
        cap=state.cap,
        frozen_clusters=frozen,
        active_clusters=active,
        frozen_medians=medians,
        tick=batch.tick,
    )


def selected_keyframes(state: MemoryState, tick: int) -> SelectedKeyframes:
    """Representatives that have exited the window at ``tick``, capped.

    A cluster whose median is still inside the window is pending and skipped.
    """
    limit = tick - state.N + 1
    reps = [m for m in state.frozen_medians if m < limit]
    for c in state.active_clusters:
        m = c.median
        if m < limit:
            reps.append(m)
    return enforce_cap(SelectedKeyframes(tuple(reps)), state.cap)


def build_visual_memory(log: Iterable[int], d: int) -> list[int]:
    """One-shot batch form: medians of every cluster in ``log``."""
    return [c.median for c in single_linkage(log, d)]
