from __future__ import annotations

import numpy as np


def finite_diff_grad(lossfn, params: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``lossfn`` at ``params``.

    ``lossfn`` receives a perturbed copy of ``params`` and must return a float.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    p = np.array(params, dtype=np.float64)
    out = np.empty_like(p)
    flat, gflat = p.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(lossfn(p.copy()))
        flat[i] = orig - h
        fm = float(lossfn(p.copy()))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max coordinate error scaled by max(1, |grad|)."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / scale)) if a.size else 0.0
