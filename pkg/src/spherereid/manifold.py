"""Vector math on the unit hypersphere.

Functions accept a single vector of shape ``(d,)`` or a batch of row vectors
of shape ``(n, d)``; batches are normalized row by row.
"""

import numpy as np

from .errors import DegenerateNorm, DimensionMismatch

NORM_FLOOR = 1e-12


def _as_float(v):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim not in (1, 2) or v.shape[-1] < 1:
        raise DimensionMismatch(f"expected a vector or a batch of vectors, got shape {v.shape}")
    return v


def _norms(v):
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(~(norms > NORM_FLOOR)):
        raise DegenerateNorm(f"vector norm at or below norm floor {NORM_FLOOR:g}")
    return norms


def l2_normalize(v):
    """Project ``v`` (or each row of it) onto the unit sphere."""
    v = _as_float(v)
    return v / _norms(v)


def l2_normalize_backward(v, upstream):
    """Vector-Jacobian product of :func:`l2_normalize` at ``v``.

    The Jacobian is ``(I - x x^T) / |v|`` with ``x = v / |v|``, so the result is
    tangent to the sphere at ``x``.
    """
    v = _as_float(v)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != v.shape:
        raise DimensionMismatch(f"upstream shape {upstream.shape} != input shape {v.shape}")
    norms = _norms(v)
    x = v / norms
    radial = np.sum(upstream * x, axis=-1, keepdims=True)
    return (upstream - radial * x) / norms


def cosine_similarity(a, b):
    """Dot product of two unit vectors, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} differ")
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


def sphere_euclidean(a, b):
    """Chord length between two unit vectors, sqrt(2 - 2 cos)."""
    c = cosine_similarity(a, b)
    return float(np.sqrt(max(2.0 - 2.0 * c, 0.0)))


def is_unit(v, tol=1e-9):
    v = np.asarray(v, dtype=np.float64)
    return bool(np.all(np.abs(np.linalg.norm(v, axis=-1) - 1.0) <= tol))
