"""Command-line entry points: gen, perturb, train, register, eval, hks, icp.

Machine-readable JSON goes to stdout; human summaries and diagnostics go to
stderr. Every failure exits nonzero with a single-line message.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import cloud_io as cio
from .config import make_config, parse_config_file, config_to_text
from .hks import hks_for_cloud, signature_csv
from .icp import icp
from .model import Difformer
from .serialization import load_model, save_model
from .synthetic import generate_dataset
from .training import compute_metrics

CONFIG_FLAGS = ("seed", "points_per_frame", "k", "d", "heads", "head_dim", "ode_steps",
                "ode_t", "ode_method", "hks_eigs", "hks_times", "topk_fraction", "lr",
                "epochs", "rr_trans_cm", "rr_rot_deg", "rotation_error",
                "translation_error")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    types = {"ode_t": float, "topk_fraction": float, "lr": float, "rr_trans_cm": float,
             "rr_rot_deg": float, "ode_method": str, "rotation_error": str,
             "translation_error": str}
    for name in CONFIG_FLAGS:
        p.add_argument(f"--{name.replace('_', '-')}", dest=name,
                       type=types.get(name, int), default=None)
    p.add_argument("--tiny", action="store_true",
                   help="CI-speed profile (d=64, 256 points per frame)")
    p.add_argument("--config", default=None, help="key = value config file")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--vanilla-self-attention", action="store_true",
                       help="drop the signature term from self-attention scores")
    group.add_argument("--no-self-attention", action="store_true",
                       help="replace self-attention with an identity pass")


def _build_config(args, model_path=None):
    values = {}
    config_path = args.config
    if config_path is None and model_path and os.path.exists(f"{model_path}.config"):
        config_path = f"{model_path}.config"
    if config_path is not None:
        values.update(parse_config_file(config_path))
    for name in CONFIG_FLAGS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    if getattr(args, "vanilla_self_attention", False):
        values["self_attention"] = "vanilla"
    if getattr(args, "no_self_attention", False):
        values["self_attention"] = "off"
    return make_config(tiny=getattr(args, "tiny", False), **values)


def _load_cloud(path) -> cio.PointCloud:
    if str(path).endswith(".bin"):
        return cio.load_kitti_bin(path)
    return cio.load_ply(path)


def _emit(payload: dict) -> None:
    json.dump(payload, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _info(message: str) -> None:
    print(message, file=sys.stderr)


def _load_fitted_model(args) -> Difformer:
    cfg = _build_config(args, model_path=args.model)
    model = Difformer(**{k: getattr(cfg, k) for k in cfg.__dataclass_fields__})
    model.load_store(load_model(args.model))
    return model


# ----------------------------------------------------------------- commands

def cmd_gen(args) -> None:
    cfg = _build_config(args)
    ids = generate_dataset(args.out, args.pairs, cfg.points_per_frame,
                           args.sigma, cfg.seed, force=args.force, k=cfg.k)
    _info(f"wrote {3 * len(ids)} files for {len(ids)} pairs to {args.out}")
    _emit({"pairs": len(ids), "dir": args.out, "points_per_frame": cfg.points_per_frame,
           "sigma": args.sigma, "seed": cfg.seed})


def cmd_train(args) -> None:
    cfg = _build_config(args)
    pairs = cio.load_dataset(args.data)
    model = Difformer(**{k: getattr(cfg, k) for k in cfg.__dataclass_fields__})
    _info(f"training on {len(pairs)} pairs for {cfg.epochs} epochs "
          f"(d={cfg.d}, N={cfg.points_per_frame}, lr={cfg.lr})")
    model.fit(pairs, log=lambda e, v: _info(f"epoch {e}: mean loss {v:.6f}"))
    save_model(model.store, args.out)
    cio.atomic_write_text(f"{args.out}.config", config_to_text(cfg))
    curve_path = f"{args.out}.losses.csv"
    cio.atomic_write_text(curve_path, "epoch,mean_loss\n" + "".join(
        f"{i},{v:.17g}\n" for i, v in enumerate(model.loss_curve_)))
    _info(f"model written to {args.out}; loss curve to {curve_path}")
    _emit({"model": args.out, "epochs": cfg.epochs, "final_loss": model.loss_curve_[-1],
           "n_pairs": len(pairs)})


def cmd_register(args) -> None:
    model = _load_fitted_model(args)
    fwd = model.forward(_load_cloud(args.source), _load_cloud(args.target))
    transform = [[*row] for row in
                 np.hstack([fwd.rotation.data, fwd.translation.data.T]).tolist()]
    for row in transform:
        _info("  ".join(f"{v: .6f}" for v in row))
    _emit({"transform": transform, "residual": fwd.residual,
           "pairs_used": int(fwd.corr.pairs.shape[0])})


def _perturb_records(pairs, args, cfg):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 200]))
    out = []
    for rec in pairs:
        src, dst = rec.source, rec.target
        if args.sigma > 0:
            src = cio.add_gaussian_noise(src, args.sigma, rng)
            dst = cio.add_gaussian_noise(dst, args.sigma, rng)
        if args.crop:
            extent = (args.frame_x, args.frame_y)
            region = (args.region_x, args.region_y)
            src = cio.crop_region(src, extent, region)
            dst = cio.crop_region(dst, extent, region)
        out.append(cio.PairRecord(src, dst, rec.ground_truth, rec.id))
    return out


def _add_perturb_flags(p) -> None:
    p.add_argument("--sigma", type=float, default=0.0, help="Gaussian noise std, meters")
    p.add_argument("--crop", action="store_true", help="cut the lower-left region")
    p.add_argument("--frame-x", type=float, default=60.0)
    p.add_argument("--frame-y", type=float, default=30.0)
    p.add_argument("--region-x", type=float, default=25.0)
    p.add_argument("--region-y", type=float, default=15.0)


def cmd_eval(args) -> None:
    model = _load_fitted_model(args)
    cfg = model.config
    pairs = _perturb_records(cio.load_dataset(args.data), args, cfg)
    preds = model.predict_pairs(pairs)
    metrics = compute_metrics(preds, [p.ground_truth for p in pairs],
                              rr_trans_cm=cfg.rr_trans_cm, rr_rot_deg=cfg.rr_rot_deg,
                              rotation_error=cfg.rotation_error,
                              translation_error=cfg.translation_error)
    _info(f"{metrics.n_pairs} pairs: trans MAE {metrics.trans_mae_cm:.3f} cm, "
          f"rot MAE {metrics.rot_mae_deg:.4f} deg, RR {metrics.rr_percent:.1f}%")
    _emit(metrics.to_json_dict())


def cmd_perturb(args) -> None:
    cfg = make_config(seed=args.seed)
    pairs = _perturb_records(cio.load_dataset(args.input), args, cfg)
    os.makedirs(args.out, exist_ok=True)
    existing = [f for f in os.listdir(args.out) if not f.startswith(".")]
    if existing and not args.force:
        raise ValueError(f"{args.out} is not empty; pass --force to overwrite")
    for rec in pairs:
        cio.save_pair(args.out, rec)
    _info(f"perturbed {len(pairs)} pairs -> {args.out}")
    _emit({"pairs": len(pairs), "dir": args.out, "sigma": args.sigma,
           "crop": bool(args.crop)})


def cmd_hks(args) -> None:
    cfg = _build_config(args)
    cloud = _load_cloud(args.cloud)
    sig = hks_for_cloud(cloud.points, k=cfg.k, m=min(cfg.hks_eigs, cloud.n),
                        m_t=cfg.hks_times)
    text = signature_csv(sig)
    if args.out:
        cio.atomic_write_text(args.out, text)
        _info(f"signatures for {cloud.n} points -> {args.out}")
    else:
        sys.stdout.write(text)
        _info(f"signatures for {cloud.n} points at {cfg.hks_times} times")


def cmd_icp(args) -> None:
    cfg = _build_config(args)
    if args.data:
        pairs = cio.load_dataset(args.data)
        preds = [icp(p.source, p.target, max_iter=args.max_iter, tol=args.tol)
                 for p in pairs]
        metrics = compute_metrics(preds, [p.ground_truth for p in pairs],
                                  rr_trans_cm=cfg.rr_trans_cm, rr_rot_deg=cfg.rr_rot_deg,
                                  rotation_error=cfg.rotation_error,
                                  translation_error=cfg.translation_error)
        _info(f"icp over {metrics.n_pairs} pairs: trans MAE {metrics.trans_mae_cm:.3f} cm, "
              f"rot MAE {metrics.rot_mae_deg:.4f} deg, RR {metrics.rr_percent:.1f}%")
        _emit(metrics.to_json_dict())
        return
    est = icp(_load_cloud(args.source), _load_cloud(args.target),
              max_iter=args.max_iter, tol=args.tol)
    _emit({"transform": est.matrix34().tolist()})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="difformer",
                                     description="Point cloud registration toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, required=True)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--force", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a registration model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("register", help="align two clouds with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("eval", help="evaluate a model over a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    _add_perturb_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("perturb", help="write a noise/crop-perturbed copy of a dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    _add_perturb_flags(p)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("hks", help="dump heat kernel signatures as CSV")
    p.add_argument("--cloud", required=True)
    p.add_argument("--out", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_hks)

    p = sub.add_parser("icp", help="run the ICP baseline")
    p.add_argument("--data", default=None)
    p.add_argument("--source", default=None)
    p.add_argument("--target", default=None)
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-8)
    _add_config_flags(p)
    p.set_defaults(func=cmd_icp)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "icp" and not args.data and not (args.source and args.target):
        print("difformer icp: need --data or both --source and --target", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except Exception as exc:  # single-line diagnostic, nonzero exit
        print(f"difformer {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
