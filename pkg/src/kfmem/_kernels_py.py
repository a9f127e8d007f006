"""Pure-Python reference kernels.

These mirror the compiled routines in ``_ckernels.pyx`` one for one and are
used whenever the extension is unavailable (or ``KFMEM_PURE_PYTHON=1``).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


def link_sorted(values: Sequence[int], d: int) -> list[int]:
    """Return the start offset of every single-linkage run in sorted ``values``.

    A new run starts wherever the gap to the previous element exceeds ``d``.
    """
    n = len(values)
    if n == 0:
        return []
    starts = [0]
    prev = values[0]
    for i in range(1, n):
        cur = values[i]
        if cur - prev > d:
            starts.append(i)
        prev = cur
    return starts


def lower_medians(values: Sequence[int], starts: Sequence[int]) -> list[int]:
    """Lower median of each run delimited by ``starts`` (runs are sorted)."""
    n = len(values)
    out = []
    for j, s in enumerate(starts):
        e = starts[j + 1] if j + 1 < len(starts) else n
        out.append(values[s + (e - s - 1) // 2])
    return out


def lerp_f32(pre: np.ndarray, ft: np.ndarray, alpha: float) -> np.ndarray:
    # float64 accumulation keeps the result inside [min, max] after rounding
    a = np.asarray(pre, dtype=np.float64)
    b = np.asarray(ft, dtype=np.float64)
    return ((1.0 - alpha) * a + alpha * b).astype(np.float32)
