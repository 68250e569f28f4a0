"""Kernel acceleration switch.

Hot loops are written once in a numba-compatible subset of Python.  When
numba is importable and ``SHAREDESS_DISABLE_NUMBA`` is unset (or ``0``) they
are compiled with ``@njit``; otherwise the pure-numpy twin registered next to
each kernel is used instead.
"""
from __future__ import annotations

import os

_FLAG = "SHAREDESS_DISABLE_NUMBA"


def _numba_requested() -> bool:
    return os.environ.get(_FLAG, "0").strip().lower() in ("", "0", "false", "no")


try:  # pragma: no cover - depends on environment
    if not _numba_requested():
        raise ImportError("numba disabled by environment")
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _njit = None
    HAVE_NUMBA = False


def kernel(numpy_impl):
    """Pick between a jitted loop kernel and its numpy fallback.

    Usage::

        @kernel(_pivot_numpy)
        def _pivot(T, r, j): ...

    The decorated loop body is compiled when numba is active, otherwise
    ``numpy_impl`` is returned.  Both variants are kept reachable as
    ``.loop_impl`` / ``.numpy_impl`` attributes for benchmarking.
    """

    def decorator(loop_impl):
        if HAVE_NUMBA:
            fn = _njit(cache=True, nogil=True)(loop_impl)
        else:
            fn = numpy_impl
        try:
            fn.loop_impl = loop_impl
            fn.numpy_impl = numpy_impl
        except AttributeError:  # numba dispatchers accept attributes, but be safe
            pass
        return fn

    return decorator


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
