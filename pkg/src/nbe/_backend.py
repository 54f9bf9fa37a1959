"""Select the kernel backend once, at import.

The compiled extension is used when it imports cleanly; setting
``NBE_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from . import _pykernels

if os.environ.get("NBE_PURE_PYTHON", "") not in ("", "0"):
    kernels = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels
        BACKEND = "cython"
    except ImportError:
        kernels = _pykernels
        BACKEND = "python"

__all__ = ["kernels", "BACKEND", "_pykernels"]
