"""Hot sampling kernels with a compiled core and a pure-numpy fallback.

The compiled extension (``_native``, Cython) is preferred when it was built;
otherwise the numpy implementations are used transparently. Set
``NIMSLAM_KERNELS=python`` or ``NIMSLAM_KERNELS=native`` to force a backend
(forcing ``native`` raises if the extension is missing).
"""

import os

from . import _numpy

_FORCED = os.environ.get("NIMSLAM_KERNELS", "").strip().lower()

if _FORCED == "python":
    _impl = _numpy
elif _FORCED == "native":
    from . import _native as _impl
elif _FORCED == "":
    try:
        from . import _native as _impl
    except ImportError:
        _impl = _numpy
else:
    raise ImportError(f"NIMSLAM_KERNELS must be 'python' or 'native', got {_FORCED!r}")

tri_gather = _impl.tri_gather
tri_gather_posgrad = _impl.tri_gather_posgrad
tri_scatter_add = _impl.tri_scatter_add
bilinear_gather = _impl.bilinear_gather
bilinear_posgrad = _impl.bilinear_posgrad


def backend_name() -> str:
    """Name of the active kernel backend: 'native' or 'python'."""
    return _impl.BACKEND


def available_backends():
    backends = {"python": _numpy}
    try:
        from . import _native
        backends["native"] = _native
    except ImportError:
        pass
    return backends
