"""Iterative closest point baseline: nearest-neighbor matching plus the
unit-weight closed-form solver, iterated until the update stalls."""

from __future__ import annotations

import numpy as np

from .cloud_io import PointCloud
from .procrustes import solve_rigid
from .transforms import RigidTransform
from .validation import as_points, check_registration_support


def nearest_neighbor_indices(queries: np.ndarray, refs: np.ndarray) -> np.ndarray:
    """Index of the closest reference row for every query row (ties: smaller index)."""
    d2 = ((queries ** 2).sum(axis=1)[:, None] + (refs ** 2).sum(axis=1)[None, :]
          - 2.0 * queries @ refs.T)
    return d2.argmin(axis=1)


def icp(source, target, max_iter: int = 50, tol: float = 1e-8) -> RigidTransform:
    src = as_points(source.points if isinstance(source, PointCloud) else source, "source")
    dst = as_points(target.points if isinstance(target, PointCloud) else target, "target")
    check_registration_support(src, "source")
    check_registration_support(dst, "target")
    current = RigidTransform.identity()
    for _ in range(max_iter):
        matched = dst[nearest_neighbor_indices(current.apply(src), dst)]
        est = solve_rigid(src, matched)
        change = (np.linalg.norm(est.rotation - current.rotation)
                  + np.linalg.norm(est.translation - current.translation))
        current = est
        if change < tol:
            break
    return current
