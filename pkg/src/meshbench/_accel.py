"""Kernel backend selection: numba JIT by default, pure numpy on request.

Set MESHBENCH_PURE_NUMPY=1 to force the vectorized numpy kernels even when
numba is importable. The flag is read once at import time.
"""

import os

ENV_FLAG = "MESHBENCH_PURE_NUMPY"


def _pure_numpy_requested() -> bool:
    return os.environ.get(ENV_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


if _pure_numpy_requested():
    NUMBA_ENABLED = False
else:
    try:
        import numba  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False


def njit(*args, **kwargs):
    """numba.njit when the numba backend is active, identity decorator otherwise."""
    if NUMBA_ENABLED:
        from numba import njit as _njit

        return _njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda func: func
