"""Backend switch for the numeric kernels.

Set ``XGYROSIM_NUMBA=0`` in the environment to force the pure-numpy path.
Both paths evaluate every floating-point operation in the same order, so
they produce bit-identical results.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_REQUESTED = os.environ.get("XGYROSIM_NUMBA", "1").strip().lower() not in (
    "0",
    "false",
    "no",
    "off",
)
NUMBA_AVAILABLE = numba is not None
NUMBA_ENABLED = NUMBA_REQUESTED and NUMBA_AVAILABLE


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise.

    fastmath stays off: contraction or reassociation would break the
    bit-for-bit agreement with the numpy path.
    """
    kwargs.setdefault("cache", True)
    if numba is None:
        if args and callable(args[0]):
            return args[0]
        return lambda func: func
    return numba.njit(*args, **kwargs)
