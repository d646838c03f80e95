"""Kernel backend selection: compiled Cython extension with a numpy fallback.

The active backend is chosen once at import time. ``SEGDIFF_KERNELS`` forces
the choice: ``compiled``, ``numpy``, or ``auto`` (default, prefers compiled).
"""

import os

from . import numpy_backend

try:
    from . import _conv_ext
except ImportError:
    _conv_ext = None

_choice = os.environ.get("SEGDIFF_KERNELS", "auto").lower()
if _choice == "numpy":
    _impl = numpy_backend
elif _choice == "compiled":
    if _conv_ext is None:
        raise ImportError(
            "SEGDIFF_KERNELS=compiled but the segdiff.kernels._conv_ext "
            "extension is not built; reinstall the package or use SEGDIFF_KERNELS=numpy"
        )
    _impl = _conv_ext
elif _choice == "auto":
    _impl = _conv_ext if _conv_ext is not None else numpy_backend
else:
    raise ValueError(f"unknown SEGDIFF_KERNELS value: {_choice!r}")

im2col = _impl.im2col
col2im = _impl.col2im


def backend_name():
    """Name of the kernel backend selected at import ('compiled' or 'numpy')."""
    return "compiled" if _impl is _conv_ext else "numpy"
