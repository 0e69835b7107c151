"""Central finite-difference oracle, independent of the backward passes."""

import numpy as np

H = 1e-5


def numeric_grad(loss_fn, array, h=H):
    """d loss / d array by central differences, perturbing ``array`` in place."""
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = array[idx]
        array[idx] = orig + h
        up = loss_fn()
        array[idx] = orig - h
        down = loss_fn()
        array[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def rel_error(analytic, numeric):
    """Norm-wise relative error, guarded against an all-zero gradient."""
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return num / den
