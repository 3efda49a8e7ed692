"""JIT switch for the hot kernels.

Set ``NAPPING_LAB_NO_NUMBA=1`` before import to run every kernel as plain
Python/numpy. Results are identical up to floating point summation order.
"""

import os

_FLAG = "NAPPING_LAB_NO_NUMBA"


def numba_disabled():
    return os.environ.get(_FLAG, "").strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = False
if not numba_disabled():
    try:
        import numba  # noqa: F401

        USE_NUMBA = True
    except ImportError:  # pragma: no cover
        USE_NUMBA = False


def kernel(fn=None, *, fallback=None):
    """Compile ``fn`` with ``numba.njit(cache=True)`` unless disabled.

    ``fallback`` replaces ``fn`` when numba is off; use it where the loop
    form that numba prefers would crawl in the interpreter.
    """
    def wrap(f):
        if not USE_NUMBA:
            return fallback or f
        import numba

        return numba.njit(cache=True)(f)

    return wrap if fn is None else wrap(fn)
