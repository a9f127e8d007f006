"""Kernel dispatch: compiled extension when importable, pure Python otherwise.

Set ``KFMEM_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"

if os.environ.get("KFMEM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

link_sorted = _impl.link_sorted
lower_medians = _impl.lower_medians
lerp_f32 = _impl.lerp_f32


def backends() -> dict:
    """All importable backends by name, for tests and benchmarks."""
    out = {"python": _kernels_py}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
