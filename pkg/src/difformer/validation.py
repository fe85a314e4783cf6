"""Input validation helpers shared across the library surface."""

from __future__ import annotations

import numpy as np


def as_points(x, name="points") -> np.ndarray:
    """Coerce to a finite float64 (N, 3) array."""
    arr = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite coordinates")
    return arr


def as_features(x, name="features") -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_registration_support(points: np.ndarray, name="cloud") -> None:
    """Registration entry points need at least 4 points of support."""
    if points.shape[0] < 4:
        raise ValueError(f"{name} has {points.shape[0]} points; registration requires N >= 4")


def check_k(k: int, n: int) -> int:
    k = int(k)
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the number of points n={n}")
    return k
