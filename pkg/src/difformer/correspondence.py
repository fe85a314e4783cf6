"""Attention-based correspondence: frame-to-frame weight matrix, per-row argmax
matching, top-fraction pair selection, and soft targets as convex blends."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class CorrespondenceSet:
    pairs: np.ndarray  # (K, 2) source/target indices, unique in the source column
    x_sel: np.ndarray  # (K, 3) selected source points
    y_soft: Tensor  # (K, 3) attention-weighted targets
    scores: np.ndarray  # (K,) match scores, non-increasing


def scaled_softmax_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Row-stochastic similarity: softmax(a b^T / sqrt(width)) over b's rows."""
    if a.shape[1] != b.shape[1]:
        raise T.ShapeError(f"similarity requires equal widths, got {a.shape} vs {b.shape}")
    inv_scale = 1.0 / np.sqrt(a.shape[1])
    return T.softmax_rows(T.smul(T.matmul(a, T.transpose(b)), inv_scale))


def attention_matrix(f_x: Tensor, f_x_sc: Tensor, f_y: Tensor, f_y_sc: Tensor) -> Tensor:
    return scaled_softmax_similarity(T.add(f_x, f_x_sc), T.add(f_y, f_y_sc))


def top_k_pairs(weights: np.ndarray, fraction: float):
    """Per-row argmax matches ranked by score; keep the top round(fraction * N) rows.

    Ties break toward the smaller column for the argmax and the smaller row in
    the ranking, so selection is deterministic.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = weights.shape[0]
    k_sel = int(np.floor(fraction * n + 0.5))
    if k_sel < 3:
        raise ValueError(f"top-{k_sel} selection is too small: the transform solver "
                         f"needs at least 3 pairs")
    cols = weights.argmax(axis=1)  # first maximum on ties
    scores = weights[np.arange(n), cols]
    order = np.lexsort((np.arange(n), -scores))[:k_sel]
    return order, cols[order], scores[order]


def soft_targets(w_sel: Tensor, y_sel: Tensor) -> Tensor:
    """Blend selected targets by the restricted attention rows (convex weights)."""
    return T.matmul(w_sel, y_sel)


def build_correspondence(f_x: Tensor, f_x_sc: Tensor, f_y: Tensor, f_y_sc: Tensor,
                         x_points: np.ndarray, y_points: Tensor,
                         fraction: float) -> CorrespondenceSet:
    """Full selection pipeline; the restricted similarity is recomputed on the
    selected subsets before blending targets."""
    sum_x = T.add(f_x, f_x_sc)
    sum_y = T.add(f_y, f_y_sc)
    full = scaled_softmax_similarity(sum_x, sum_y)
    rows, cols, scores = top_k_pairs(full.data, fraction)
    w_sel = scaled_softmax_similarity(T.gather_rows(sum_x, rows), T.gather_rows(sum_y, cols))
    y_soft = soft_targets(w_sel, T.gather_rows(y_points, cols))
    return CorrespondenceSet(np.column_stack([rows, cols]), x_points[rows], y_soft, scores)
