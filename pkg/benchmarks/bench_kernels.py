"""Time the compiled kernels against the pure-Python fallback.

Run with ``python3 benchmarks/bench_kernels.py [--size N] [--repeat R]``.
"""

from __future__ import annotations

import argparse
import random
import timeit

import numpy as np

from kfmem import kernels
from kfmem import memory as mem


def workloads(size: int, seed: int = 0) -> dict:
    rng = random.Random(seed)
    values = sorted(rng.randrange(size * 4) for _ in range(size))
    a = np.random.default_rng(seed).standard_normal(size * 100).astype(np.float32)
    b = a[::-1].copy()
    return {
        "link_sorted": lambda impl: impl.link_sorted(values, 5),
        "lower_medians": lambda impl, s=kernels.backends()["python"].link_sorted(values, 5): impl.lower_medians(values, s),
        "lerp_f32": lambda impl: impl.lerp_f32(a, b, 0.8),
    }


def bench_ingest(size: int, seed: int = 0) -> float:
    """Seconds to fold ``size`` ticks of nominations through memory with the active backend."""
    rng = random.Random(seed)
    batches = []
    for t in range(size):
        n = min(8, t + 1)
        batches.append(mem.NominationBatch.from_positions(t, [rng.randint(1, n) for _ in range(rng.randint(0, 2))], n))

    def go():
        state = mem.MemoryState()
        for b in batches:
            state = mem.ingest(state, b)
        return state

    return min(timeit.repeat(go, number=1, repeat=3))


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--size", type=int, default=20000)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    impls = kernels.backends()
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<14}" + "".join(f"{name:>12}" for name in impls) + f"{'speedup':>10}")
    for kname, fn in workloads(args.size).items():
        times = {name: min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat)) for name, impl in impls.items()}
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{kname:<14}" + "".join(f"{t * 1e3:>10.3f}ms" for t in times.values()) + f"{speed:>9.1f}x")
    print(f"ingest {args.size // 10} ticks ({kernels.BACKEND}): {bench_ingest(args.size // 10) * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
