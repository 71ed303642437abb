"""Numba dispatch.

Setting ``CONFFLOW_DISABLE_NUMBA=1`` in the environment (before import) routes
every hot kernel to its pure-numpy twin. The flag is read once at import time.
"""

import os
from typing import Any, Callable

_DISABLED = os.environ.get("CONFFLOW_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _numba_njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    HAVE_NUMBA = False
    _numba_njit = None


def njit(*args: Any, **kwargs: Any) -> Callable:
    """``numba.njit`` when available, otherwise a no-op decorator."""
    if HAVE_NUMBA:
        return _numba_njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
