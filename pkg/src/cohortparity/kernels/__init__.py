"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The active backend is chosen once at import time from the
``COHORTPARITY_BACKEND`` environment variable:

``numba`` (default when numba imports)
    JIT-compiled loops from :mod:`._numba`.
``numpy``
    Vectorized reference code from :mod:`._numpy`.

Both implementations stay importable as :data:`numpy_impl` and
:data:`numba_impl` (the latter is ``None`` without numba) so benchmarks and
tests can compare them in one process. Results agree to floating-point
round-off, not bitwise; a single run is deterministic on either backend.
"""

import os

from . import _numpy as numpy_impl

try:
    from . import _numba as numba_impl
except ImportError:  # pragma: no cover - exercised only without numba
    numba_impl = None

_requested = os.environ.get("COHORTPARITY_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ValueError(
        f"COHORTPARITY_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )
if _requested == "numba" and numba_impl is None:
    raise ImportError("COHORTPARITY_BACKEND=numba but numba is not installed")

if _requested == "numpy" or numba_impl is None:
    BACKEND = "numpy"
    _impl = numpy_impl
else:
    BACKEND = "numba"
    _impl = numba_impl

sparse_matmul = _impl.sparse_matmul
sparse_matmul_t = _impl.sparse_matmul_t
nearest_centroid = _impl.nearest_centroid
lstm_pointwise_forward = _impl.lstm_pointwise_forward
lstm_pointwise_backward = _impl.lstm_pointwise_backward
softmax_xent = _impl.softmax_xent

PROB_FLOOR = numpy_impl.PROB_FLOOR

__all__ = [
    "BACKEND",
    "PROB_FLOOR",
    "lstm_pointwise_backward",
    "lstm_pointwise_forward",
    "nearest_centroid",
    "numba_impl",
    "numpy_impl",
    "softmax_xent",
    "sparse_matmul",
    "sparse_matmul_t",
]
