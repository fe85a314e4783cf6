"""Rigid transforms on SO(3) x R^3, acting as y = R x + t."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .validation import as_points

ORTHONORMALITY_TOL = 1e-9


@dataclass(frozen=True)
class RigidTransform:
    """Rotation matrix plus translation vector, validated to stay in SO(3)."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise ValueError("transform contains non-finite entries")
        err = np.linalg.norm(r.T @ r - np.eye(3))
        if err > ORTHONORMALITY_TOL:
            raise ValueError(f"rotation is not orthonormal (residual {err:.3e})")
        if abs(np.linalg.det(r) - 1.0) > ORTHONORMALITY_TOL:
            raise ValueError(f"rotation determinant {np.linalg.det(r):.6f} != +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        pts = as_points(points)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying ``other`` first, then ``self``."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def matrix34(self) -> np.ndarray:
        return np.hstack([self.rotation, self.translation.reshape(3, 1)])


def rotation_zyx(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rotation composed as Z(yaw) @ Y(pitch) @ X(roll), angles in radians."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return rz @ ry @ rx


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Project a near-rotation 3x3 matrix onto SO(3)."""
    u, _s, vh = np.linalg.svd(np.asarray(m, dtype=np.float64).reshape(3, 3))
    d = np.sign(np.linalg.det(u @ vh))
    return u @ np.diag([1.0, 1.0, d]) @ vh


# Translation box (meters) and rotation ranges (degrees) for synthetic pairs:
# x/y/z translations and roll/pitch/yaw angles are drawn uniformly from these.
TRANSLATION_RANGES = ((-1.0, 1.0), (-2.0, 2.0), (-0.5, 0.5))
ROTATION_RANGES_DEG = ((0.0, 5.0), (0.0, 5.0), (0.0, 30.0))


def sample_random_transform(rng) -> RigidTransform:
    t = np.array([rng.uniform(lo, hi) for lo, hi in TRANSLATION_RANGES])
    roll, pitch, yaw = (np.deg2rad(rng.uniform(lo, hi)) for lo, hi in ROTATION_RANGES_DEG)
    return RigidTransform(rotation_zyx(roll, pitch, yaw), t)


def transform_from_row(values, *, warn_tol=1e-6, fail_tol=1e-3) -> RigidTransform:
    """Build a transform from a row-major 3x4 [R|t] row of 12 numbers.

    Rotations with orthonormality drift are projected onto the nearest
    rotation; drift beyond ``warn_tol`` warns, beyond ``fail_tol`` is an error.
    """
    vals = np.asarray(values, dtype=np.float64).reshape(-1)
    if vals.size != 12:
        raise ValueError(f"pose row must have 12 numbers, got {vals.size}")
    m = vals.reshape(3, 4)
    r, t = m[:, :3], m[:, 3]
    err = np.linalg.norm(r.T @ r - np.eye(3))
    if err > fail_tol:
        raise ValueError(f"pose rotation is not orthonormal (residual {err:.3e} > {fail_tol})")
    if err > warn_tol:
        warnings.warn(f"pose rotation drift {err:.3e}; re-orthonormalizing", stacklevel=2)
    if err > ORTHONORMALITY_TOL:
        r = nearest_rotation(r)
    return RigidTransform(r, t)


def geodesic_angle_deg(r_a: np.ndarray, r_b: np.ndarray) -> float:
    """Angle of the relative rotation between two rotation matrices, in degrees."""
    c = (np.trace(r_a.T @ r_b) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def geodesic_angle_rad_precise(r_a: np.ndarray, r_b: np.ndarray) -> float:
    """Geodesic angle in radians via ||R_a - R_b||_F = 2 sqrt(2) sin(theta/2).

    Unlike the arccos-of-trace form, this stays accurate for angles far below
    1e-8 rad, which matters when asserting near-exact recovery.
    """
    s = np.linalg.norm(r_a - r_b) / (2.0 * np.sqrt(2.0))
    return float(2.0 * np.arcsin(np.clip(s, 0.0, 1.0)))


def euler_zyx_angles(r: np.ndarray) -> np.ndarray:
    """Decompose a rotation into (roll, pitch, yaw) radians under the ZYX convention."""
    pitch = np.arcsin(np.clip(-r[2, 0], -1.0, 1.0))
    if abs(r[2, 0]) < 1.0 - 1e-12:
        roll = np.arctan2(r[2, 1], r[2, 2])
        yaw = np.arctan2(r[1, 0], r[0, 0])
    else:  # gimbal lock: fold yaw into roll
        roll = np.arctan2(-r[1, 2], r[1, 1])
        yaw = 0.0
    return np.array([roll, pitch, yaw])
