"""Point cloud containers, file formats, and perturbation ops.

File surfaces:
  - KITTI-style ``.bin``: consecutive 16-byte records of four little-endian
    float32 values (x, y, z, intensity).
  - ASCII PLY with float x/y/z properties (binary PLY is rejected).
  - Pose text files: one row-major 3x4 [R|t] line of 12 numbers per pose.
  - Dataset directories: ``<id>_src.ply``, ``<id>_dst.ply``, ``<id>_gt.txt``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .transforms import RigidTransform, transform_from_row
from .validation import as_points


@dataclass
class PointCloud:
    """N x 3 coordinates in meters; optional per-point intensity kept for round trips."""

    points: np.ndarray
    intensity: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        pts = as_points(pts) if pts.shape[0] else pts
        self.points = pts
        if self.intensity is not None:
            inten = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
            if inten.shape[0] != pts.shape[0]:
                raise ValueError("intensity length does not match point count")
            self.intensity = inten

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass
class PairRecord:
    """A registration pair: ground truth maps source into target, y = R x + t."""

    source: PointCloud
    target: PointCloud
    ground_truth: RigidTransform
    id: str


# ------------------------------------------------------------------ KITTI bin

def load_kitti_bin(path) -> PointCloud:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % 16 != 0:
        raise ValueError(f"{path}: truncated .bin file, {raw.size} bytes is not a "
                         f"multiple of 16 (trailing {raw.size % 16} bytes at offset "
                         f"{raw.size - raw.size % 16})")
    rec = raw.view("<f4").reshape(-1, 4).astype(np.float64)
    return PointCloud(rec[:, :3], rec[:, 3])


def save_kitti_bin(cloud: PointCloud, path) -> None:
    rec = np.zeros((cloud.n, 4), dtype="<f4")
    rec[:, :3] = cloud.points.astype("<f4")
    if cloud.intensity is not None:
        rec[:, 3] = cloud.intensity.astype("<f4")
    _atomic_write_bytes(path, rec.tobytes())


# ------------------------------------------------------------------ ASCII PLY

def load_ply(path) -> PointCloud:
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        text = blob.decode("ascii")
    except UnicodeDecodeError as exc:
        raise ValueError(f"{path}: unsupported format (not ASCII PLY)") from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError(f"{path}: missing 'ply' magic line")
    n_vertex = None
    props = []
    fmt_seen = False
    body_start = None
    for i, line in enumerate(lines[1:], start=1):
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "format":
            fmt_seen = True
            if tokens[1] != "ascii":
                raise ValueError(f"{path}: unsupported format '{tokens[1]}' (ASCII PLY only)")
        elif tokens[0] == "element" and tokens[1] == "vertex":
            n_vertex = int(tokens[2])
        elif tokens[0] == "property" and n_vertex is not None:
            props.append(tokens[-1])
        elif tokens[0] == "end_header":
            body_start = i + 1
            break
    if not fmt_seen:
        raise ValueError(f"{path}: missing header field 'format'")
    if body_start is None:
        raise ValueError(f"{path}: missing header field 'end_header'")
    if n_vertex is None:
        raise ValueError(f"{path}: missing header field 'element vertex'")
    for needed in ("x", "y", "z"):
        if needed not in props:
            raise ValueError(f"{path}: missing header field 'property ... {needed}'")
    cols = {name: props.index(name) for name in ("x", "y", "z")}
    body = lines[body_start:body_start + n_vertex]
    if len(body) < n_vertex:
        raise ValueError(f"{path}: header promises {n_vertex} vertices, file has {len(body)}")
    data = np.array([[float(v) for v in line.split()] for line in body])
    if data.size and data.shape[1] < len(props):
        raise ValueError(f"{path}: vertex rows have fewer columns than declared properties")
    pts = data[:, [cols["x"], cols["y"], cols["z"]]] if n_vertex else np.zeros((0, 3))
    return PointCloud(pts)


def save_ply(cloud: PointCloud, path) -> None:
    out = ["ply", "format ascii 1.0", f"element vertex {cloud.n}",
           "property float x", "property float y", "property float z", "end_header"]
    for p in cloud.points:
        out.append(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}")
    _atomic_write_bytes(path, ("\n".join(out) + "\n").encode("ascii"))


# ----------------------------------------------------------------- pose files

def parse_pose_file(path) -> list[RigidTransform]:
    poses = []
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                vals = [float(v) for v in line.split()]
            except ValueError as exc:
                raise ValueError(f"{path}:{ln}: non-numeric pose entry") from exc
            if len(vals) != 12:
                raise ValueError(f"{path}:{ln}: expected 12 numbers per pose line, "
                                 f"got {len(vals)}")
            poses.append(transform_from_row(vals))
    return poses


def relative_transforms(poses: list[RigidTransform]) -> list[RigidTransform]:
    """Relative motion between consecutive poses: T_rel = T_i^-1 o T_{i+1}."""
    return [poses[i].inverse().compose(poses[i + 1]) for i in range(len(poses) - 1)]


def save_pose_file(transforms, path) -> None:
    lines = [" ".join(f"{v:.17g}" for v in t.matrix34().reshape(-1)) for t in transforms]
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("ascii"))


# -------------------------------------------------------------- perturbations

def apply_transform(cloud: PointCloud, transform: RigidTransform) -> PointCloud:
    return PointCloud(transform.apply(cloud.points),
                      None if cloud.intensity is None else cloud.intensity.copy())


def add_gaussian_noise(cloud: PointCloud, sigma: float, rng) -> PointCloud:
    if sigma < 0:
        raise ValueError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return PointCloud(cloud.points.copy(), cloud.intensity)
    return PointCloud(cloud.points + rng.normal(0.0, sigma, size=cloud.points.shape),
                      cloud.intensity)


DEFAULT_FRAME_EXTENT = (60.0, 30.0)
DEFAULT_CROP_REGION = (25.0, 15.0)


def crop_region(cloud: PointCloud, frame_extent=DEFAULT_FRAME_EXTENT,
                region=DEFAULT_CROP_REGION) -> PointCloud:
    """Delete the lower-left rectangle of the frame's xy bounding box.

    The removal rectangle covers ``region`` out of ``frame_extent`` anchored at
    the bounding-box minimum, so the defaults reproduce a 25 m x 15 m cut from
    a 60 m x 30 m frame and the geometry scales with the actual cloud extent.
    """
    fx, fy = float(frame_extent[0]), float(frame_extent[1])
    rx, ry = float(region[0]), float(region[1])
    if rx > fx or ry > fy or rx < 0 or ry < 0:
        raise ValueError(f"crop region {region} exceeds frame extent {frame_extent}")
    lo = cloud.points[:, :2].min(axis=0)
    span = cloud.points[:, :2].max(axis=0) - lo
    cut = lo + span * np.array([rx / fx, ry / fy])
    # strictly-interior points are deleted, so a zero-area region removes nothing
    inside = (cloud.points[:, 0] < cut[0]) & (cloud.points[:, 1] < cut[1])
    keep = ~inside
    if keep.sum() < 4:
        raise ValueError(f"crop would leave {int(keep.sum())} points; at least 4 required")
    return PointCloud(cloud.points[keep],
                      None if cloud.intensity is None else cloud.intensity[keep])


def downsample(cloud: PointCloud, n_target: int, rng) -> PointCloud:
    if n_target > cloud.n:
        raise ValueError(f"cannot downsample {cloud.n} points to {n_target}")
    if n_target == cloud.n:
        return PointCloud(cloud.points.copy(), cloud.intensity)
    idx = np.sort(rng.choice(cloud.n, size=n_target, replace=False))
    return PointCloud(cloud.points[idx],
                      None if cloud.intensity is None else cloud.intensity[idx])


# ---------------------------------------------------------- dataset directory

def pair_paths(directory, pair_id: str):
    return (os.path.join(directory, f"{pair_id}_src.ply"),
            os.path.join(directory, f"{pair_id}_dst.ply"),
            os.path.join(directory, f"{pair_id}_gt.txt"))


def save_pair(directory, record: PairRecord) -> None:
    src, dst, gt = pair_paths(directory, record.id)
    save_ply(record.source, src)
    save_ply(record.target, dst)
    save_pose_file([record.ground_truth], gt)


def load_pair(directory, pair_id: str) -> PairRecord:
    src, dst, gt = pair_paths(directory, pair_id)
    poses = parse_pose_file(gt)
    if len(poses) != 1:
        raise ValueError(f"{gt}: expected exactly one ground-truth line, got {len(poses)}")
    return PairRecord(load_ply(src), load_ply(dst), poses[0], pair_id)


def list_pair_ids(directory) -> list[str]:
    ids = sorted(f[:-len("_src.ply")] for f in os.listdir(directory)
                 if f.endswith("_src.ply"))
    if not ids:
        raise ValueError(f"{directory}: no '<id>_src.ply' files found")
    return ids


def load_dataset(directory) -> list[PairRecord]:
    return [load_pair(directory, pid) for pid in list_pair_ids(directory)]


def _atomic_write_bytes(path, blob: bytes) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))
