"""Central finite-difference oracle shared by the gradient tests."""

import numpy as np

H = 1e-5


def numeric_grad(f, arr: np.ndarray, h: float = H, indices=None) -> np.ndarray:
    """d f() / d arr by central differences, perturbing ``arr`` in place."""
    grad = np.zeros_like(arr)
    it = indices if indices is not None else np.ndindex(arr.shape)
    for idx in it:
        old = arr[idx]
        arr[idx] = old + h
        fp = f()
        arr[idx] = old - h
        fm = f()
        arr[idx] = old
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)
