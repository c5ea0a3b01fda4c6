"""Backend selection for the compiled kernels.

Set ``MIXEDVHI_DISABLE_NUMBA=1`` to force the pure-numpy code paths.
"""

import os

_FLAG = os.environ.get("MIXEDVHI_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` with caching, or a no-op decorator when numba is off.

    The decorated function is always importable; whether it is compiled
    depends on the flag above.
    """
    kwargs.setdefault("cache", True)

    if numba is None:
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn

    return numba.njit(*args, **kwargs)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
