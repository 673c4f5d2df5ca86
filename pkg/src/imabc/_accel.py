"""Backend switch for the hot kernels.

Set ``IMABC_DISABLE_NUMBA=1`` to force the pure-numpy code paths. Both paths
consume identical pre-drawn random inputs, so they agree to floating point.
"""
import os

_FLAG = os.environ.get("IMABC_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG not in ("", "0", "false", "no")

try:
    if DISABLED_BY_ENV:
        raise ImportError("numba disabled by IMABC_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


def backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"
