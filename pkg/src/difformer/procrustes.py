"""Weighted rigid-transform estimation from corresponded points.

The rotation comes from the SVD of a weighted cross-covariance matrix with a
determinant correction diag(1, 1, det(V U^T)) so the result stays in SO(3)
even for reflection-inducing configurations. Per-point weights are produced by
feature-conditioned softplus heads, so gradients flow from the alignment
losses back into the feature pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ParameterStore, Tensor
from .transforms import RigidTransform

WEIGHT_HEAD_BIAS = float(np.log(np.e - 1.0))  # softplus(bias) == 1


@dataclass
class ProcrustesWeights:
    """Strictly positive per-point weight triples for means and covariance."""

    wx: Tensor  # (K, 3)
    wy: Tensor  # (K, 3)
    wm: Tensor  # (K, 3)


class WeightHeads:
    """Three linear+softplus heads (width -> 3), biased to emit ~1 at init."""

    def __init__(self, store: ParameterStore, *, width: int,
                 rng: np.random.Generator | None = None):
        self.store = store
        if rng is not None:
            for head in ("wx", "wy", "wm"):
                store.add(f"proc.{head}.w", T.glorot_uniform(rng, width, 3))
                store.add(f"proc.{head}.b", np.full((1, 3), WEIGHT_HEAD_BIAS))

    def _head(self, feats: Tensor, head: str) -> Tensor:
        z = T.add(T.matmul(feats, self.store[f"proc.{head}.w"]),
                  self.store[f"proc.{head}.b"])
        return T.softplus(z)

    def __call__(self, f_sc_x_sel: Tensor, f_sc_y_sel: Tensor) -> ProcrustesWeights:
        return ProcrustesWeights(self._head(f_sc_x_sel, "wx"),
                                 self._head(f_sc_y_sel, "wy"),
                                 self._head(f_sc_x_sel, "wm"))


def unit_weights(k: int) -> ProcrustesWeights:
    ones = lambda: Tensor(np.ones((k, 3)))
    return ProcrustesWeights(ones(), ones(), ones())


def weighted_stats(x_sel: Tensor, y_soft: Tensor, w: ProcrustesWeights):
    """Weighted means and cross-covariance; weights multiply elementwise.

    x_w = (1/K) sum_i wx_i . x_i, same for y; M = Xc^T (wm . Yc).
    """
    k = x_sel.shape[0]
    if y_soft.shape != (k, 3) or x_sel.shape[1] != 3:
        raise T.ShapeError(f"weighted_stats expects matching (K, 3) inputs, "
                           f"got {x_sel.shape} and {y_soft.shape}")
    col_sum = Tensor(np.ones((1, k)))
    x_w = T.smul(T.matmul(col_sum, T.mul(w.wx, x_sel)), 1.0 / k)
    y_w = T.smul(T.matmul(col_sum, T.mul(w.wy, y_soft)), 1.0 / k)
    xc = T.sub(x_sel, x_w)
    yc = T.sub(y_soft, y_w)
    m = T.matmul(T.transpose(xc), T.mul(w.wm, yc))
    return x_w, y_w, m


def solve_transform(x_sel: Tensor, y_soft: Tensor, w: ProcrustesWeights):
    """Closed-form weighted alignment; returns (rotation, translation) tensors.

    The translation is a (1, 3) row; the pair acts as y = x @ R^T + t.
    """
    if x_sel.shape[0] < 3:
        raise ValueError(f"transform solver needs at least 3 pairs, got {x_sel.shape[0]}")
    centered = x_sel.data - x_sel.data.mean(axis=0, keepdims=True)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] < 1e-12:
        raise ValueError("degenerate correspondence support: selected source points "
                         "are collinear")
    x_w, y_w, m = weighted_stats(x_sel, y_soft, w)
    u, _s, v = T.svd3(m)
    # the sign of det(V U^T) is locally constant, so it enters as data
    sign = float(np.sign(np.linalg.det(v.data @ u.data.T)))
    correction = Tensor(np.diag([1.0, 1.0, sign]))
    r = T.matmul(T.matmul(v, correction), T.transpose(u))
    t = T.sub(y_w, T.matmul(x_w, T.transpose(r)))
    return r, t


def as_rigid_transform(r: Tensor, t: Tensor) -> RigidTransform:
    return RigidTransform(r.data.copy(), t.data.reshape(3).copy())


def solve_rigid(x_points, y_points, weights: ProcrustesWeights | None = None) -> RigidTransform:
    """Convenience non-training path: numpy in, validated RigidTransform out."""
    x = Tensor(np.asarray(x_points, dtype=np.float64))
    y = Tensor(np.asarray(y_points, dtype=np.float64))
    if weights is None:
        weights = unit_weights(x.shape[0])
    r, t = solve_transform(x, y, weights)
    return as_rigid_transform(r, t)
