"""Numba/NumPy backend selection.

All hot numerical kernels in :mod:`fedbatch.kernels` are written as plain
Python functions operating on numpy arrays and scalars.  By default they are
compiled with ``numba.njit``.  Setting the environment variable
``FEDBATCH_NUMBA=0`` (or ``false``/``no``/``off``) before import selects the
pure-Python/NumPy fallback instead; the exact same source runs uncompiled, so
results are identical up to floating-point round-off of the compiler.

``benchmarks/bench_backends.py`` times the two paths against each other.
"""

import os

_FALSY = {"0", "false", "no", "off"}


def _numba_requested() -> bool:
    return os.environ.get("FEDBATCH_NUMBA", "1").strip().lower() not in _FALSY


NUMBA_ENABLED = False
if _numba_requested():
    try:
        import numba  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
        NUMBA_ENABLED = False


def maybe_njit(*args, **kwargs):
    """``numba.njit`` when the numba backend is active, identity otherwise."""
    if NUMBA_ENABLED:
        from numba import njit

        return njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]

    def deco(func):
        return func

    return deco


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
