"""Synthetic registration scenes: plane/box/cluster primitives plus clutter,
paired with sampled ground-truth transforms."""

from __future__ import annotations

import os

import numpy as np

from .cloud_io import PairRecord, PointCloud, add_gaussian_noise, apply_transform, save_pair
from .knn import is_connected
from .transforms import sample_random_transform

SCENE_EXTENT = np.array([8.0, 6.0, 2.5])


def _plane(rng, n, extent):
    pts = rng.uniform(0, 1, size=(n, 3)) * extent
    pts[:, 2] = rng.normal(0.0, 0.02, size=n)
    return pts


def _boxes(rng, n, extent):
    out = []
    n_boxes = rng.integers(2, 5)
    for count in np.array_split(np.arange(n), n_boxes):
        center = rng.uniform(0.15, 0.85, size=3) * extent
        size = rng.uniform(0.4, 1.6, size=3)
        m = len(count)
        face_axis = rng.integers(0, 3, size=m)
        face_side = rng.choice([-0.5, 0.5], size=m)
        pts = rng.uniform(-0.5, 0.5, size=(m, 3))
        pts[np.arange(m), face_axis] = face_side
        out.append(center + pts * size)
    return np.vstack(out)


def _clusters(rng, n, extent):
    out = []
    n_blobs = rng.integers(3, 7)
    for count in np.array_split(np.arange(n), n_blobs):
        center = rng.uniform(0.1, 0.9, size=3) * extent
        sigma = rng.uniform(0.08, 0.35)
        out.append(center + rng.normal(0.0, sigma, size=(len(count), 3)))
    return np.vstack(out)


def _clutter(rng, n, extent):
    return rng.uniform(0, 1, size=(n, 3)) * extent


def sample_scene(rng, n_points: int, extent=SCENE_EXTENT) -> np.ndarray:
    """A sensor-style scene: asymmetric structure, roughly centered at the origin
    (frames from a scanner are egocentric), with a small random offset."""
    extent = np.asarray(extent, dtype=np.float64)
    counts = (np.array([0.30, 0.25, 0.30, 0.15]) * n_points).astype(int)
    counts[-1] += n_points - counts.sum()
    parts = [_plane(rng, counts[0], extent), _boxes(rng, counts[1], extent),
             _clusters(rng, counts[2], extent), _clutter(rng, counts[3], extent)]
    pts = np.vstack(parts)
    offset = rng.uniform([-0.5, -0.5, -0.2], [0.5, 0.5, 0.2]) - extent / 2.0
    pts = pts + offset
    return pts[rng.permutation(n_points)]


def _pair_from_source(rng, source: PointCloud, gt, sigma: float) -> tuple[PointCloud, PointCloud]:
    target = apply_transform(source, gt)
    if sigma > 0:
        source = add_gaussian_noise(source, sigma, rng)
        target = add_gaussian_noise(target, sigma, rng)
    return source, target


def make_pair(rng, pair_id: str, n_points: int, sigma: float = 0.0,
              extent=SCENE_EXTENT, k_connectivity: int | None = None) -> PairRecord:
    """Standalone pair: a fresh scene plus a rigidly transformed copy; noise
    (if any) is added to both frames independently, so the ground truth relates
    the clean frames.

    Scenes are resampled (deterministically, from the same stream) until their
    k-NN graph is connected, since the signature pipeline requires one
    component per frame.
    """
    k = k_connectivity if k_connectivity is not None else max(2, min(20, n_points // 8))
    for _ in range(200):
        source, target = _pair_from_source(rng, PointCloud(sample_scene(rng, n_points, extent)),
                                           gt := sample_random_transform(rng), sigma)
        if is_connected(source.points, k) and is_connected(target.points, k):
            return PairRecord(source, target, gt, pair_id)
    raise RuntimeError(f"could not sample a connected {n_points}-point scene "
                       f"(k={k}); widen the extent or raise k")


def make_environment(rng, n_points: int = 4096, extent=SCENE_EXTENT) -> np.ndarray:
    """A persistent world that many frames are scanned from, benchmark-style."""
    return sample_scene(rng, n_points, np.asarray(extent, dtype=np.float64))


def sample_environment_pair(rng, environment: np.ndarray, pair_id: str, n_points: int,
                            sigma: float = 0.0, k_connectivity: int = 20) -> PairRecord:
    """A frame pair from one environment: a random point subset expressed in a
    random sensor frame, plus its rigidly transformed copy."""
    n_env = environment.shape[0]
    if n_points > n_env:
        raise ValueError(f"frame size {n_points} exceeds environment size {n_env}")
    span = environment.min(axis=0) * 0.5 + environment.max(axis=0) * 0.5
    for _ in range(200):
        idx = np.sort(rng.choice(n_env, size=n_points, replace=False))
        origin = span + rng.uniform([-2.0, -2.0, -0.5], [2.0, 2.0, 0.5])
        frame = PointCloud(environment[idx] - origin)
        source, target = _pair_from_source(rng, frame,
                                           gt := sample_random_transform(rng), sigma)
        if is_connected(source.points, k_connectivity) and \
                is_connected(target.points, k_connectivity):
            return PairRecord(source, target, gt, pair_id)
    raise RuntimeError(f"could not sample a connected {n_points}-point frame (k="
                       f"{k_connectivity}) from the environment")


def generate_dataset(out_dir, n_pairs: int, n_points: int, sigma: float,
                     seed: int, force: bool = False, k: int | None = None) -> list[str]:
    """Write n_pairs frame pairs scanned from one seeded environment."""
    os.makedirs(out_dir, exist_ok=True)
    existing = [f for f in os.listdir(out_dir) if not f.startswith(".")]
    if existing and not force:
        raise ValueError(f"{out_dir} is not empty ({len(existing)} entries); "
                         f"pass force to overwrite")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 100]))
    env = make_environment(rng, n_points=max(8 * n_points, 2048))
    k = k if k is not None else max(2, min(20, n_points // 8))
    ids = []
    for i in range(n_pairs):
        rec = sample_environment_pair(rng, env, f"pair_{i:04d}", n_points, sigma,
                                      k_connectivity=k)
        save_pair(out_dir, rec)
        ids.append(rec.id)
    return ids
