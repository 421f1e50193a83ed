"""JIT switch for the hot loops.

Set ``LEAPSGD_DISABLE_NUMBA=1`` (or run without numba installed) to route every
kernel through its pure-numpy twin. The choice is made once, at import time.
"""
import os

_FLAG = os.environ.get("LEAPSGD_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _numba_njit

    NUMBA_ENABLED = True
except ImportError:
    _numba_njit = None
    NUMBA_ENABLED = False


def njit(func=None, **kwargs):
    """``numba.njit`` when available; identity decorator otherwise."""
    if NUMBA_ENABLED:
        kwargs.setdefault("cache", True)
        if func is not None:
            return _numba_njit(**kwargs)(func)
        return _numba_njit(**kwargs)
    if func is not None:
        return func

    def wrapper(f):
        return f

    return wrapper


def backend_name():
    return "numba" if NUMBA_ENABLED else "numpy"
