"""Backend selection for the numeric kernels.

Set ``SIGKIN_PURE_NUMPY=1`` to bypass numba and run every kernel through its
numpy implementation. The flag is read once, at import time.
"""
import os

_FALSY = {"", "0", "false", "no", "off"}

PURE_NUMPY = os.environ.get("SIGKIN_PURE_NUMPY", "").strip().lower() not in _FALSY

if not PURE_NUMPY:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover - numba is a hard dependency
        PURE_NUMPY = True

BACKEND = "numpy" if PURE_NUMPY else "numba"


def maybe_njit(func):
    """Compile ``func`` with numba unless the pure-numpy path is selected."""
    if PURE_NUMPY:
        return func
    return _njit(cache=True)(func)


def njit_always(func):
    """Compile with numba regardless of the flag (benchmarks and parity tests)."""
    from numba import njit

    return njit(cache=True)(func)
