"""Finite-difference gradient oracle shared by the test modules.

The oracle only ever calls the forward computation: it perturbs raw numpy
arrays in place and re-evaluates the provided loss closure, so it stays
independent of the autodiff tape it is used to check.
"""

import numpy as np


def finite_difference(loss_fn, array: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``loss_fn()`` w.r.t. `array` (in place)."""
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(loss_fn())
        flat[i] = orig - h
        f_minus = float(loss_fn())
        flat[i] = orig
        grad.reshape(-1)[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def max_rel_err(analytic: np.ndarray, reference: np.ndarray) -> float:
    """Largest elementwise relative error, with denominators floored at 1."""
    analytic = np.asarray(analytic, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(reference)))
    return float(np.max(np.abs(analytic - reference) / denom)) if analytic.size else 0.0
