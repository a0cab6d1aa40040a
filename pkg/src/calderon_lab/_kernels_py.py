"""Pure numpy implementations of the lattice kernels.

These are the reference versions; ``_kernels.pyx`` mirrors them loop by
loop.  Both must agree to rounding error (see ``tests/test_kernels.py``).
"""

import numpy as np


def laplacian7(u, h):
    """7-point Laplacian at interior nodes; boundary entries are zero."""
    u = np.asarray(u)
    out = np.zeros_like(u)
    c = u[1:-1, 1:-1, 1:-1]
    acc = (u[2:, 1:-1, 1:-1] + u[:-2, 1:-1, 1:-1]
           + u[1:-1, 2:, 1:-1] + u[1:-1, :-2, 1:-1]
           + u[1:-1, 1:-1, 2:] + u[1:-1, 1:-1, :-2]
           - 6.0 * c)
    out[1:-1, 1:-1, 1:-1] = acc / (h * h)
    return out


def translation_l1(f, shift):
    """Sum of |f(x - s) - f(x)| over Z^3 with f zero off its array.

    ``shift`` is an integer 3-vector in lattice units.
    """
    f = np.asarray(f)
    s = [int(v) for v in shift]
    shape = tuple(n + abs(k) for n, k in zip(f.shape, s))
    work = np.zeros(shape, dtype=f.dtype)
    base = tuple(slice(max(-k, 0), max(-k, 0) + n) for n, k in zip(f.shape, s))
    moved = tuple(slice(max(k, 0), max(k, 0) + n) for n, k in zip(f.shape, s))
    work[moved] += f
    work[base] -= f
    return float(np.abs(work).sum())


def _cubic_weights(t):
    # Lagrange basis on nodes -1, 0, 1, 2 evaluated at t in [0, 1]
    return np.stack([
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ], axis=-1)


def interp_cubic(values, origin, h, points):
    """Tensor cubic Lagrange interpolation of lattice samples.

    Parameters
    ----------
    values : ndarray, shape (n1, n2, n3), real or complex
    origin : sequence of 3 floats
        Coordinates of node (0, 0, 0).
    h : float
        Lattice spacing (identical on every axis).
    points : ndarray, shape (m, 3)
        Query points inside the lattice hull.
    """
    values = np.asarray(values)
    pts = np.asarray(points, dtype=float)
    shape = np.array(values.shape)
    s = (pts - np.asarray(origin, dtype=float)) / h
    base = np.floor(s).astype(np.int64) - 1
    base = np.clip(base, 0, shape - 4)
    t = s - (base + 1)
    w = _cubic_weights(t)
    out = np.zeros(len(pts), dtype=values.dtype)
    for a in range(4):
        ia = base[:, 0] + a
        for b in range(4):
            ib = base[:, 1] + b
            wab = w[:, 0, a] * w[:, 1, b]
            for c in range(4):
                out += wab * w[:, 2, c] * values[ia, ib, base[:, 2] + c]
    return out
