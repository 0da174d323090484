"""Layer kernel backend selection.

The compiled Cython extension is preferred; the pure-numpy backend is the
fallback. Set SIGNET_KERNELS=python or SIGNET_KERNELS=cython to force one
(cython raises if the extension was not built). Both expose the same
functions and agree numerically: float64 accumulation, one rounding.
"""

import os

from . import python_backend

_forced = os.environ.get("SIGNET_KERNELS", "").strip().lower()
if _forced not in ("", "python", "cython"):
    raise ImportError(f"SIGNET_KERNELS must be 'python' or 'cython', got {_forced!r}")

if _forced == "python":
    _impl = python_backend
else:
    try:
        from . import _cykernels as _impl
    except ImportError:
        if _forced == "cython":
            raise
        _impl = python_backend

BACKEND = _impl.BACKEND_NAME

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward
lrn_forward = _impl.lrn_forward
lrn_backward = _impl.lrn_backward
set_num_threads = _impl.set_num_threads
