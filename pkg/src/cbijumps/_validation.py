import numpy as np


def as_vector(x, d: int | None = None, name: str = "vector") -> np.ndarray:
    """Return ``x`` as a 1-d float array, checking the length when ``d`` is given."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if d is not None and arr.shape[0] != d:
        raise ValueError(f"{name} must have length {d}, got {arr.shape[0]}")
    return arr


def as_matrix(M, d: int | None = None, name: str = "matrix") -> np.ndarray:
    arr = np.atleast_2d(np.asarray(M, dtype=float))
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    if d is not None and arr.shape[0] != d:
        raise ValueError(f"{name} must be {d}x{d}, got {arr.shape}")
    return arr


def as_nonneg_vector(x, d: int | None = None, name: str = "vector") -> np.ndarray:
    arr = as_vector(x, d, name)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError(f"{name} must be finite and non-negative, got {arr}")
    return arr


def check_time(t, name: str = "t") -> float:
    t = float(t)
    if not np.isfinite(t) or t < 0:
        raise ValueError(f"{name} must be finite and non-negative, got {t}")
    return t
