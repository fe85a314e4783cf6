"""Alignment losses with learnable uncertainty weights, the training loop,
and registration metrics (translation/rotation MAE, RMSE, recall)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Adam, ParameterStore, Tensor
from .transforms import RigidTransform, euler_zyx_angles, geodesic_angle_deg

LOSS_PARAM_NAMES = ("loss.gamma_t", "loss.gamma_r", "loss.eta_p", "loss.eta_rt")


def register_loss_params(store: ParameterStore) -> None:
    for name in LOSS_PARAM_NAMES:
        store.add(name, np.zeros((1, 1)))  # exp(-0) = 1: all weights start neutral


def loss_point(r: Tensor, t: Tensor, x_sel: Tensor, y_soft: Tensor) -> Tensor:
    """Mean L2 distance between transformed selected points and their soft targets."""
    moved = T.add(T.matmul(x_sel, T.transpose(r)), t)
    return T.mean_all(T.row_norm(T.sub(moved, y_soft)))


def loss_rt(r: Tensor, t: Tensor, gt: RigidTransform,
            gamma_t: Tensor, gamma_r: Tensor) -> Tensor:
    """Ground-truth deviation with learned uncertainty weighting:
    exp(-g_t) ||t - t*|| + g_t + exp(-g_r) ||R*^T R - I||_F + g_r."""
    trans_err = T.row_norm(T.sub(t, Tensor(gt.translation)))
    rot_dev = T.sub(T.matmul(Tensor(gt.rotation.T), r), Tensor(np.eye(3)))
    rot_err = T.row_norm(T.reshape(rot_dev, (1, 9)))
    return T.add(T.add(T.mul(T.exp(T.smul(gamma_t, -1.0)), trans_err), gamma_t),
                 T.add(T.mul(T.exp(T.smul(gamma_r, -1.0)), rot_err), gamma_r))


def loss_total(l_point: Tensor, l_rt: Tensor, eta_p: Tensor, eta_rt: Tensor) -> Tensor:
    return T.add(T.add(T.mul(T.exp(T.smul(eta_p, -1.0)), l_point), eta_p),
                 T.add(T.mul(T.exp(T.smul(eta_rt, -1.0)), l_rt), eta_rt))


def pair_loss(network, store: ParameterStore, source_points, target_points,
              gt: RigidTransform, cache=None) -> Tensor:
    fwd = network.forward_pair(source_points, target_points, cache=cache)
    l_p = loss_point(fwd.rotation, fwd.translation, Tensor(fwd.corr.x_sel), fwd.corr.y_soft)
    l_rt = loss_rt(fwd.rotation, fwd.translation, gt,
                   store["loss.gamma_t"], store["loss.gamma_r"])
    return loss_total(l_p, l_rt, store["loss.eta_p"], store["loss.eta_rt"])


def train(network, store: ParameterStore, pairs, *, lr: float, epochs: int,
          shuffle_rng: np.random.Generator, betas=(0.9, 0.999),
          log=None) -> list[float]:
    """Per-pair steps (batch size 1); returns the per-epoch mean loss curve."""
    opt = Adam(store, lr=lr, betas=betas)
    caches = {pair.id: {} for pair in pairs}
    curve = []
    for epoch in range(epochs):
        order = shuffle_rng.permutation(len(pairs))
        total = 0.0
        for idx in order:
            pair = pairs[idx]
            try:
                loss = pair_loss(network, store, pair.source.points, pair.target.points,
                                 pair.ground_truth, cache=caches[pair.id])
                value = loss.item()
                loss.backward()
            except ValueError as exc:
                raise RuntimeError(f"training aborted at epoch {epoch}, pair "
                                   f"'{pair.id}': {exc}") from exc
            opt.step()
            total += value
        curve.append(total / len(pairs))
        if log is not None:
            log(epoch, curve[-1])
    return curve


@dataclass
class Metrics:
    trans_mae_cm: float
    trans_rmse_cm: float
    rot_mae_deg: float
    rot_rmse_deg: float
    rr_percent: float
    n_pairs: int
    thresholds: dict
    trans_errors_cm: np.ndarray
    rot_errors_deg: np.ndarray

    def to_json_dict(self) -> dict:
        return {"trans_mae_cm": self.trans_mae_cm, "trans_rmse_cm": self.trans_rmse_cm,
                "rot_mae_deg": self.rot_mae_deg, "rot_rmse_deg": self.rot_rmse_deg,
                "rr_percent": self.rr_percent, "n_pairs": self.n_pairs,
                "thresholds": self.thresholds}


def translation_error_cm(pred: RigidTransform, gt: RigidTransform,
                         reduction="norm") -> float:
    diff = pred.translation - gt.translation
    if reduction == "norm":
        return 100.0 * float(np.linalg.norm(diff))
    if reduction == "per_axis":
        return 100.0 * float(np.abs(diff).mean())
    raise ValueError(f"unknown translation error reduction: {reduction}")


def rotation_error_deg(pred: RigidTransform, gt: RigidTransform,
                       reduction="geodesic") -> float:
    if reduction == "geodesic":
        return geodesic_angle_deg(gt.rotation, pred.rotation)
    if reduction == "euler":
        diff = euler_zyx_angles(pred.rotation) - euler_zyx_angles(gt.rotation)
        return float(np.degrees(np.abs(diff)).mean())
    raise ValueError(f"unknown rotation error reduction: {reduction}")


def compute_metrics(predictions, ground_truths, *, rr_trans_cm=30.0, rr_rot_deg=1.0,
                    rotation_error="geodesic", translation_error="norm") -> Metrics:
    if len(predictions) != len(ground_truths):
        raise ValueError("prediction and ground-truth lists must have equal length")
    if not predictions:
        raise ValueError("cannot compute metrics over an empty list")
    trans = np.array([translation_error_cm(p, g, translation_error)
                      for p, g in zip(predictions, ground_truths)])
    rot = np.array([rotation_error_deg(p, g, rotation_error)
                    for p, g in zip(predictions, ground_truths)])
    hits = (trans < rr_trans_cm) & (rot < rr_rot_deg)
    return Metrics(
        trans_mae_cm=float(np.abs(trans).mean()),
        trans_rmse_cm=float(np.sqrt((trans ** 2).mean())),
        rot_mae_deg=float(np.abs(rot).mean()),
        rot_rmse_deg=float(np.sqrt((rot ** 2).mean())),
        rr_percent=float(100.0 * hits.mean()),
        n_pairs=len(predictions),
        thresholds={"trans_cm": rr_trans_cm, "rot_deg": rr_rot_deg},
        trans_errors_cm=trans,
        rot_errors_deg=rot,
    )
