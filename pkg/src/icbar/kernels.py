"""Kernel selection: the compiled extension when it imports, otherwise the
pure-Python fallback. Set ``ICBAR_PURE_PYTHON=1`` to force the fallback."""

import os

from . import _pykernels

BACKEND = "python"
if os.environ.get("ICBAR_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

revcumsum = _impl.revcumsum
shooting = _impl.shooting

__all__ = ["BACKEND", "revcumsum", "shooting"]
