"""Numba switch for the hot kernels.

Every kernel in :mod:`echodecomp.kernels` is written in the numpy subset that
numba understands.  When JIT is enabled the functions are compiled with
``numba.njit``; otherwise plain numpy runs them, either from the same source
or, for loop-heavy kernels, from a vectorized twin.

Set ``ECHODECOMP_DISABLE_NUMBA=1`` before import to force the numpy path
(also implied when numba is not importable).
"""

import os

_FALSY = {"", "0", "false", "no", "off"}


def _env_flag(name):
    return os.environ.get(name, "").strip().lower() not in _FALSY


try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and not _env_flag("ECHODECOMP_DISABLE_NUMBA")

NUMBA_OPTS = {"cache": True, "nogil": True}


def njit(func):
    """Compile ``func`` with numba when enabled, else return it unchanged."""
    if not USE_NUMBA:
        return func
    return numba.njit(**NUMBA_OPTS)(func)


def backend():
    return "numba" if USE_NUMBA else "numpy"
