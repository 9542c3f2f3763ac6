"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is fixed at import time from the ``ALTERREAD_BACKEND``
environment variable: ``numba`` (default when importable) or ``numpy``.
Matrix products are deliberately not here; those stay on BLAS.

``benchmarks/bench_kernels.py`` times the two paths side by side.
"""

import os
import warnings

from . import numpy_backend

_requested = os.environ.get("ALTERREAD_BACKEND", "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    raise ValueError(
        f"ALTERREAD_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numpy":
    _impl = numpy_backend
else:
    try:
        from . import numba_backend as _impl
    except ImportError:
        if _requested == "numba":
            raise
        warnings.warn("numba unavailable; falling back to numpy kernels",
                      RuntimeWarning)
        _impl = numpy_backend

BACKEND = _impl.NAME

all_finite = _impl.all_finite
sigmoid = _impl.sigmoid
sigmoid_grad = _impl.sigmoid_grad
tanh_grad = _impl.tanh_grad
masked_softmax = _impl.masked_softmax
masked_softmax_grad = _impl.masked_softmax_grad
gru_reset = _impl.gru_reset
gru_reset_grad = _impl.gru_reset_grad
gru_mix = _impl.gru_mix
gru_mix_grad = _impl.gru_mix_grad
adam_update = _impl.adam_update
sq_norm = _impl.sq_norm
