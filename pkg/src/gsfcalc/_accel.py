"""Optional numba acceleration.

Set ``GSFCALC_DISABLE_NUMBA=1`` to force the pure-numpy kernels even when
numba is importable.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_flag = os.environ.get("GSFCALC_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _flag not in ("", "0", "false", "no")
USE_NUMBA = numba is not None and not DISABLED_BY_ENV

default_numba_kwargs = dict(cache=True, nogil=True, fastmath=False)


def njit(func):
    """Compile ``func`` with numba when available, else return it untouched."""
    if numba is None:
        return func
    return numba.njit(**default_numba_kwargs)(func)
