"""Warp kernel backend selection.

Imports the compiled extension when available and falls back to the numpy
implementation otherwise. Both expose the same three functions with
bit-identical results; ``BACKEND`` names the one in use.
"""

import numpy as np

from . import numpy_backend

try:
    from . import _ckern as _impl

    HAVE_COMPILED = True
except ImportError:
    _impl = numpy_backend
    HAVE_COMPILED = False

BACKEND: str = _impl.BACKEND_NAME


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def trilinear_gather(vol, disp):
    return _impl.trilinear_gather(_f64(vol), _f64(disp))


def trilinear_gather_grad(vol, disp):
    return _impl.trilinear_gather_grad(_f64(vol), _f64(disp))


def nearest_gather(values, disp):
    return _impl.nearest_gather(np.ascontiguousarray(values, dtype=np.int32), _f64(disp))
