"""Optional numba acceleration for the hot loops in :mod:`gcsl.kernels`.

Every kernel ships as a plain loop (compiled with ``numba.njit`` when numba is
importable) and as a vectorised numpy function. The loop version is used unless
``GCSL_DISABLE_NUMBA`` is set to a truthy value, in which case the numpy
version is selected at import time.
"""
from __future__ import annotations

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_FLAG = os.environ.get("GCSL_DISABLE_NUMBA", "").strip().lower()
NUMBA_AVAILABLE = numba is not None
NUMBA_ENABLED = NUMBA_AVAILABLE and _FLAG not in {"1", "true", "yes", "on"}


def jit(fn):
    """Compile ``fn`` in nopython mode if numba is present, else return it."""
    if numba is None:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def select(loop_fn, numpy_fn):
    return loop_fn if NUMBA_ENABLED else numpy_fn
