"""The registration estimator: parameter construction, the pair forward pass,
and a fit/predict surface that composes with estimator-style tooling."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .attention import SelfCrossAttention
from .cloud_io import PointCloud, downsample
from .config import RunConfig, make_config
from .correspondence import CorrespondenceSet, build_correspondence
from .diffusion import PointDiffusionNet
from .hks import HksEmbedding, hks_for_cloud
from .knn import knn
from .procrustes import WeightHeads, as_rigid_transform, solve_transform
from .tensor import ParameterStore, Tensor
from .training import loss_point, register_loss_params, train
from .transforms import RigidTransform
from .validation import as_points, check_registration_support


@dataclass
class PairForward:
    rotation: Tensor  # (3, 3)
    translation: Tensor  # (1, 3)
    corr: CorrespondenceSet
    residual: float  # mean point-to-soft-target distance at the solution


class Network:
    """All pipeline blocks bound to one parameter store."""

    def __init__(self, store: ParameterStore, cfg: RunConfig,
                 rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.store = store
        common = dict(ode_steps=cfg.ode_steps, ode_horizon=cfg.ode_t,
                      ode_method=cfg.ode_method)
        self.pdn = PointDiffusionNet(store, d=cfg.d, k=cfg.k, rng=rng, **common)
        self.hks_embed = HksEmbedding(store, width=cfg.width, m_t=cfg.hks_times,
                                      k=cfg.k, rng=rng, **common)
        self.attention = SelfCrossAttention(store, width=cfg.width, heads=cfg.heads,
                                            head_dim=cfg.head_dim,
                                            mode=cfg.self_attention, rng=rng)
        self.weight_heads = WeightHeads(store, width=cfg.width, rng=rng)
        if rng is not None:
            register_loss_params(store)

    def _side(self, tag: str, points: np.ndarray, cache: dict):
        """Features and signature embedding for one frame, with the pose-independent
        pieces (coordinate graph, signature, signature graph) cached per pair."""
        cfg = self.cfg
        key = f"{tag}.refine_graph"
        if key not in cache:
            cache[key] = knn(points, cfg.k)
        feats = self.pdn(points, refine_graph=cache[key])
        hks_emb = None
        if cfg.self_attention == "hks":
            sig_key = f"{tag}.sig"
            if sig_key not in cache:
                m = min(cfg.hks_eigs, points.shape[0])
                sig = hks_for_cloud(points, k=cfg.k, m=m, m_t=cfg.hks_times)
                cache[sig_key] = sig
                cache[f"{tag}.sig_graph"] = knn(sig.values, cfg.k)
            hks_emb = self.hks_embed(cache[sig_key], cache[f"{tag}.sig_graph"])
        return feats, hks_emb

    def forward_pair(self, source_points, target_points, cache: dict | None = None) -> PairForward:
        src = as_points(source_points, "source")
        dst = as_points(target_points, "target")
        check_registration_support(src, "source")
        check_registration_support(dst, "target")
        cache = cache if cache is not None else {}
        f_x, h_x = self._side("src", src, cache)
        f_y, h_y = self._side("dst", dst, cache)
        sc_x, sc_y = self.attention(f_x, f_y, h_x, h_y)
        corr = build_correspondence(f_x, sc_x, f_y, sc_y, src, Tensor(dst),
                                    self.cfg.topk_fraction)
        rows, cols = corr.pairs[:, 0], corr.pairs[:, 1]
        weights = self.weight_heads(T.gather_rows(sc_x, rows), T.gather_rows(sc_y, cols))
        r, t = solve_transform(Tensor(corr.x_sel), corr.y_soft, weights)
        residual = loss_point(r, t, Tensor(corr.x_sel), corr.y_soft).item()
        return PairForward(r, t, corr, residual)


class Difformer:
    """Trainable point-cloud registrar with a fit/predict estimator surface.

    Parameters mirror :class:`RunConfig`; ``get_params`` / ``set_params`` follow
    the scikit-learn convention so the registrar drops into grid searches and
    pipelines that only rely on that protocol.
    """

    def __init__(self, **params):
        self.config = make_config(**params)
        self._network: Network | None = None
        self.loss_curve_: list[float] | None = None

    # -------------------------------------------------------- estimator API

    def get_params(self, deep=True) -> dict:
        return {f.name: getattr(self.config, f.name) for f in fields(self.config)}

    def set_params(self, **params) -> "Difformer":
        merged = self.get_params()
        merged.update(params)
        self.config = RunConfig(**merged)
        self._network = None
        return self

    # ---------------------------------------------------------- model state

    @property
    def store(self) -> ParameterStore:
        return self.network.store

    @property
    def network(self) -> Network:
        if self._network is None:
            store = ParameterStore()
            rng = np.random.default_rng(np.random.SeedSequence([self.config.seed, 0]))
            self._network = Network(store, self.config, rng=rng)
        return self._network

    def load_store(self, store: ParameterStore) -> "Difformer":
        """Bind externally loaded parameters, validating the full inventory."""
        reference = ParameterStore()
        Network(reference, self.config, rng=np.random.default_rng(0))
        if reference.names() != store.names():
            missing = set(reference.names()) - set(store.names())
            extra = set(store.names()) - set(reference.names())
            raise ValueError(f"parameter inventory does not match this configuration "
                             f"(missing: {sorted(missing)[:3]}, extra: {sorted(extra)[:3]})")
        for name, ref in reference.items():
            if store[name].shape != ref.shape:
                raise ValueError(f"parameter '{name}' has shape {store[name].shape}, "
                                 f"configuration expects {ref.shape}")
        self._network = Network(store, self.config, rng=None)
        return self

    # ------------------------------------------------------------- pipeline

    def _prep(self, cloud, rng) -> np.ndarray:
        pc = cloud if isinstance(cloud, PointCloud) else PointCloud(cloud)
        if pc.n > self.config.points_per_frame:
            pc = downsample(pc, self.config.points_per_frame, rng)
        return pc.points

    def fit(self, pairs, log=None) -> "Difformer":
        """Train on PairRecords; batch size is one pair per Adam step."""
        net = self.network
        rng = np.random.default_rng(np.random.SeedSequence([self.config.seed, 1]))
        prepped = [type(p)(PointCloud(self._prep(p.source, rng)),
                           PointCloud(self._prep(p.target, rng)),
                           p.ground_truth, p.id) for p in pairs]
        shuffle_rng = np.random.default_rng(np.random.SeedSequence([self.config.seed, 2]))
        self.loss_curve_ = train(net, net.store, prepped, lr=self.config.lr,
                                 epochs=self.config.epochs, shuffle_rng=shuffle_rng,
                                 log=log)
        return self

    def forward(self, source, target) -> PairForward:
        rng = np.random.default_rng(np.random.SeedSequence([self.config.seed, 3]))
        return self.network.forward_pair(self._prep(source, rng), self._prep(target, rng))

    def predict(self, source, target) -> RigidTransform:
        """Estimate the transform mapping ``source`` onto ``target``."""
        fwd = self.forward(source, target)
        return as_rigid_transform(fwd.rotation, fwd.translation)

    def predict_pairs(self, pairs) -> list[RigidTransform]:
        return [self.predict(p.source, p.target) for p in pairs]
