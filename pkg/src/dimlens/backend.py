"""Kernel backend selection.

The hot inner loops (spatial convolutions and per-pixel noise sampling) exist
twice: a numba @njit implementation in `_kernels_numba` and a vectorized
pure-numpy implementation in `_kernels_numpy`.  The numba path is the default
whenever numba imports; set the environment variable

    DIMLENS_DISABLE_NUMBA=1

before import to force the numpy fallback.  Both backends consume the same
per-pixel counter streams, so sampled images agree across backends (see
tests/test_backend.py and benchmarks/bench_kernels.py).
"""

import os

DISABLE_ENV = "DIMLENS_DISABLE_NUMBA"

from . import _kernels_numpy

try:
    if os.environ.get(DISABLE_ENV, "").strip() in ("", "0"):
        from . import _kernels_numba
        _impl = _kernels_numba
        _name = "numba"
    else:
        _impl = _kernels_numpy
        _name = "numpy"
except ImportError:
    _impl = _kernels_numpy
    _name = "numpy"


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return _name


def kernels():
    """The active kernel module (conv2d_*, depthwise_*, rng_* functions)."""
    return _impl
