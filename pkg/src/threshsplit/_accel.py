"""Backend selection for the hot kernels.

Every hot loop in the package exists twice: a loop-style function compiled
with numba and a vectorized pure-numpy twin.  Setting the environment
variable ``THRESHSPLIT_DISABLE_NUMBA=1`` (or running without numba
installed) routes the public dispatchers to the numpy twins.
"""

from __future__ import annotations

import os

try:
    import numba

    if "NUMBA_THREADING_LAYER" not in os.environ:
        numba.config.THREADING_LAYER = "workqueue"
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_FLAG = os.environ.get("THRESHSPLIT_DISABLE_NUMBA", "").strip().lower()
USE_NUMBA = HAVE_NUMBA and _FLAG in ("", "0", "false", "no")


def njit(fn=None, **kwargs):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise."""
    kwargs.setdefault("cache", True)

    def wrap(f):
        if not HAVE_NUMBA:
            return f
        return numba.njit(**kwargs)(f)

    return wrap(fn) if fn is not None else wrap


def set_threads(n: int | None) -> int:
    """Cap numba worker threads; returns the thread count in effect."""
    if n is None:
        env = os.environ.get("THRESHSPLIT_THREADS")
        n = int(env) if env else None
    if not HAVE_NUMBA:
        return 1
    if n is not None:
        n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
        numba.set_num_threads(n)
    return numba.get_num_threads()


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
