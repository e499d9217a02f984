"""Kernel backend selection.

The compiled extension (Cython) is preferred when importable; otherwise the
numpy fallback is used.  Override with the environment variable
``RADOOD_BACKEND`` set to ``ext``, ``numpy`` or ``auto`` (default).
"""

import os

from . import _numpy_impl

_choice = os.environ.get("RADOOD_BACKEND", "auto").lower()
if _choice not in ("auto", "ext", "numpy"):
    raise RuntimeError(f"RADOOD_BACKEND must be auto|ext|numpy, got {_choice!r}")

_impl = _numpy_impl
_name = "numpy"
if _choice in ("auto", "ext"):
    try:
        from . import _ext as _compiled
        _impl = _compiled
        _name = "ext"
    except ImportError:
        if _choice == "ext":
            raise RuntimeError(
                "RADOOD_BACKEND=ext but the compiled extension is not available; "
                "reinstall with a working C compiler or use RADOOD_BACKEND=numpy")


def backend_name():
    """Name of the active kernel backend: 'ext' or 'numpy'."""
    return _name


def get_impl(name=None):
    """Return a backend module by name (for parity tests and benchmarks)."""
    if name in (None, "active"):
        return _impl
    if name == "numpy":
        return _numpy_impl
    if name == "ext":
        from . import _ext
        return _ext
    raise ValueError(f"unknown backend {name!r}")


tyler_batch = _impl.tyler_batch

# The convolution stays on the BLAS-backed numpy path even when the
# extension is present: at these shapes (m = 16, small channel counts) the
# im2col matmul measures several times faster than the compiled loop.  The
# compiled versions remain available through get_impl("ext") and are covered
# by the parity tests and benchmarks/bench_kernels.py.
conv1d = _numpy_impl.conv1d
conv1d_grad_w = _numpy_impl.conv1d_grad_w
