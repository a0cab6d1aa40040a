"""Backend selection for the lattice kernels.

The compiled extension is used when it imports; otherwise the numpy
versions are used.  Setting ``CALDERON_LAB_PURE=1`` forces the numpy path.
"""

import os

import numpy as np

from . import _kernels_py

_ext = None
if os.environ.get("CALDERON_LAB_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _ext
    except ImportError:  # pragma: no cover - depends on the build
        _ext = None

BACKEND = "cython" if _ext is not None else "numpy"


def _prep(a):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return np.ascontiguousarray(a, dtype=np.complex128)
    return np.ascontiguousarray(a, dtype=np.float64)


def laplacian7(u, h, backend=None):
    """Second-order 7-point Laplacian; zero on the lattice boundary."""
    if (backend or BACKEND) == "cython":
        return _ext.laplacian7(_prep(u), float(h))
    return _kernels_py.laplacian7(_prep(u), float(h))


def translation_l1(f, shift, backend=None):
    """Lattice sum of |f(x - s) - f(x)| for an integer shift (unweighted)."""
    shift = tuple(int(s) for s in shift)
    if (backend or BACKEND) == "cython":
        return _ext.translation_l1(_prep(f), shift)
    return _kernels_py.translation_l1(_prep(f), shift)


def interp_cubic(values, origin, h, points, backend=None):
    """Tricubic Lagrange interpolation at arbitrary points of the hull."""
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    origin = tuple(float(o) for o in origin)
    if (backend or BACKEND) == "cython":
        return _ext.interp_cubic(_prep(values), origin, float(h), pts)
    return _kernels_py.interp_cubic(_prep(values), origin, float(h), pts)
