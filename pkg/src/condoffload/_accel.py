"""Optional numba acceleration.

Set ``CONDOFFLOAD_DISABLE_NUMBA=1`` to run every kernel through its pure
numpy path. The flag is read once, at import time.
"""
from __future__ import annotations

import os

_DISABLED = os.environ.get("CONDOFFLOAD_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError
    import numba as _numba
except ImportError:  # pragma: no cover - depends on environment
    _numba = None

USE_NUMBA = _numba is not None


def njit(*args, **kwargs):
    """``numba.njit`` when available and enabled, otherwise identity."""
    if _numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    return _numba.njit(*args, **kwargs)
