"""Linear interpolation of named float32 weight maps, and a small binary container.

Container layout (little-endian)::

    b"WMAP" | u32 entry count | per entry: u16 name length, UTF-8 name, u64 element count, float32 data
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from . import kernels

MAGIC = b"WMAP"


class SchemaMismatch(ValueError):
    pass


class NonFiniteInput(ValueError):
    pass


class CorruptFile(ValueError):
    pass


class IoFailure(OSError):
    pass


class WeightMap(dict):
    """Name to 1-D float32 array.  Order of insertion is the file order."""

    @classmethod
    def of(cls, entries: Mapping[str, object]) -> "WeightMap":
        return cls((k, np.ascontiguousarray(np.asarray(v, dtype=np.float32).ravel())) for k, v in entries.items())

    def check(self) -> None:
        for name, arr in self.items():
            if not name:
                raise SchemaMismatch("empty entry name")
            if not np.all(np.isfinite(arr)):
                raise NonFiniteInput(f"non-finite values in {name!r}")


@dataclass(frozen=True)
class MergeConfig:
    alpha: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")


def merge(pre: Mapping, ft: Mapping, cfg: Union[MergeConfig, float] = MergeConfig()) -> WeightMap:
    """Elementwise ``(1 - alpha) * pre + alpha * ft`` over every entry; names and lengths must agree."""
    alpha = cfg.alpha if isinstance(cfg, MergeConfig) else MergeConfig(cfg).alpha
    pre, ft = WeightMap.of(pre), WeightMap.of(ft)
    if set(pre) != set(ft):
        raise SchemaMismatch(f"entry names differ: {sorted(set(pre) ^ set(ft))}")
    for name in pre:
        if pre[name].shape != ft[name].shape:
            raise SchemaMismatch(f"{name!r}: {pre[name].size} vs {ft[name].size} elements")
    pre.check()
    ft.check()
    if alpha in (0.0, 1.0):
        # exact endpoints, signed zeros included
        src = pre if alpha == 0.0 else ft
        return WeightMap((name, src[name].copy()) for name in pre)
    return WeightMap((name, kernels.lerp_f32(pre[name], ft[name], alpha)) for name in pre)


def dumps(wm: Mapping) -> bytes:
    wm = WeightMap.of(wm)
    if not wm:
        raise CorruptFile("refusing to write an empty weight map")
    wm.check()
    parts = [MAGIC, struct.pack("<I", len(wm))]
    for name, arr in wm.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise SchemaMismatch(f"entry name too long: {len(raw)} bytes")
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<Q", arr.size), arr.astype("<f4").tobytes()]
    return b"".join(parts)


def loads(buf: bytes) -> WeightMap:
    view = memoryview(buf)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CorruptFile(f"truncated at byte {pos}: need {n} more")
        chunk = view[pos: pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CorruptFile("bad magic")
    (count,) = struct.unpack("<I", take(4))
    if count == 0:
        raise CorruptFile("no entries")
    out = WeightMap()
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        try:
            name = bytes(take(nlen)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptFile("entry name is not UTF-8") from exc
        if not name or name in out:
            raise CorruptFile(f"empty or duplicate entry name {name!r}")
        (n,) = struct.unpack("<Q", take(8))
        out[name] = np.frombuffer(bytes(take(4 * n)), dtype="<f4").astype(np.float32)
    if pos != len(view):
        raise CorruptFile(f"{len(view) - pos} trailing bytes")
    return out


def save(wm: Mapping, path: Union[str, Path]) -> None:
    data = dumps(wm)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load(path: Union[str, Path]) -> WeightMap:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return loads(data)
