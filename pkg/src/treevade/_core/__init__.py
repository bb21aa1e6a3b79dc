"""Kernel backend selection.

The hot kernels (batched tree traversal, single-change sweep, reachable leaf
ranges) exist twice: a Cython extension (``treevade._speedups``) and a
pure-Python fallback with identical semantics. The compiled lane is preferred
when importable; set ``TREEVADE_PURE_PYTHON=1`` to force the fallback.
"""

import os

from treevade._core import fallback
from treevade._core.flat import FlatEnsemble

if os.environ.get("TREEVADE_PURE_PYTHON"):
    kernels = fallback
    BACKEND = "python"
else:
    try:
        from treevade import _speedups as kernels

        BACKEND = "compiled"
    except ImportError:
        kernels = fallback
        BACKEND = "python"

__all__ = ["FlatEnsemble", "kernels", "fallback", "BACKEND"]
