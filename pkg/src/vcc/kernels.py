"""Select the compiled kernel backend, falling back to numpy.

Set ``VCC_PURE_PYTHON=1`` to force the numpy backend.
"""
import os

from . import _pykernels

if os.environ.get("VCC_PURE_PYTHON"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

wsola_search = _impl.wsola_search
ar_generate = _impl.ar_generate
