"""Kernel backend selection.

Hot kernels are compiled with numba by default. Setting the environment
variable ``MCTSPIPE_PURE_PYTHON=1`` (before import) switches every kernel to
a plain-Python fallback with identical numerics: slower, but handy for
debugging and for benchmarking the JIT against the interpreter
(``mctspipe kernels``). If numba is not importable the fallback is used
automatically.
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("MCTSPIPE_PURE_PYTHON", "").strip().lower()
PURE_PYTHON = _FLAG in ("1", "true", "yes", "on")

if not PURE_PYTHON:
    try:
        import numba as _numba  # noqa: F401
    except ImportError:  # pragma: no cover - exercised only without numba
        PURE_PYTHON = True

NUMBA_ENABLED = not PURE_PYTHON


def kernel(**jit_kwargs):
    """Decorator for hot kernels: numba ``njit`` or a no-op, per backend.

    ``cache=True`` is always added so compiled kernels persist across
    processes.
    """
    if NUMBA_ENABLED:
        from numba import njit

        jit_kwargs.setdefault("cache", True)
        return njit(**jit_kwargs)

    def passthrough(fn):
        return fn

    return passthrough
