"""Backend switch for the hot kernels.

Numba is used when it imports and ``BRAKEFILTER_DISABLE_NUMBA`` is unset
(or ``0``/``false``). Otherwise :func:`njit` degrades to the identity so
the same source runs as plain Python, and :mod:`brakefilter.kernels`
routes callers to its vectorized numpy implementations instead.
"""

import os

_FALSY = ("", "0", "false", "no", "off")

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

NUMBA_AVAILABLE = _numba is not None
USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("BRAKEFILTER_DISABLE_NUMBA", "").strip().lower() in _FALSY


def njit(*args, **kwargs):
    if NUMBA_AVAILABLE:
        kwargs.setdefault("cache", True)
        return _numba.njit(*args, **kwargs)

    def wrapper(func):
        return func

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrapper
