"""Central finite differences for checking hand-derived gradients."""

import numpy as np


def numerical_gradient(f, x, eps=1e-6):
    """Gradient of the scalar function ``f()`` with respect to array ``x``.

    ``x`` is perturbed in place, one entry at a time, and restored afterwards.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        fplus = f()
        x[idx] = orig - eps
        fminus = f()
        x[idx] = orig
        grad[idx] = (fplus - fminus) / (2 * eps)
    return grad


def relative_error(analytic, numeric):
    """Norm-wise relative error, ``|a - n| / max(|a|, |n|)``; 0 when both vanish."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < 1e-300:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)
