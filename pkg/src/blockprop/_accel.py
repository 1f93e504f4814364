"""Numba dispatch.

Hot kernels are written once as plain Python/numpy and compiled with
``numba.njit`` when available. Set ``BLOCKPROP_NUMBA=0`` to force the
pure-numpy fallback (read once at import time).
"""

from __future__ import annotations

import logging
import os

logger = logging.getLogger(__name__)

_FLAG = os.environ.get("BLOCKPROP_NUMBA", "1").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("0", "false", "no", "off")


def njit(func):
    """Compile ``func`` in nopython mode, or return ``None`` if numba is missing."""
    if not HAVE_NUMBA:
        return None
    return numba.njit(cache=True, nogil=True)(func)


def pick(jitted, fallback):
    """Return the implementation selected by the environment flag."""
    if USE_NUMBA and jitted is not None:
        return jitted
    return fallback


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
