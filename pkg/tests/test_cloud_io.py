"""File formats (bin/PLY/pose), perturbation ops, dataset layout."""

import numpy as np
import pytest

from difformer import cloud_io as cio
from difformer.transforms import RigidTransform


# ------------------------------------------------------------------ KITTI bin

def test_bin_single_record(tmp_path):
    path = tmp_path / "one.bin"
    np.array([1.0, 2.0, 3.0, 0.5], dtype="<f4").tofile(path)
    cloud = cio.load_kitti_bin(path)
    assert cloud.n == 1
    assert np.array_equal(cloud.points, [[1.0, 2.0, 3.0]])
    assert cloud.intensity[0] == 0.5


def test_bin_empty_file_gives_empty_cloud(tmp_path):
    path = tmp_path / "empty.bin"
    path.write_bytes(b"")
    cloud = cio.load_kitti_bin(path)
    assert cloud.n == 0


def test_bin_truncated_reports_offset(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\x00" * 20)
    with pytest.raises(ValueError, match="offset 16"):
        cio.load_kitti_bin(path)


def test_bin_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    cloud = cio.PointCloud(rng.normal(size=(100, 3)), rng.uniform(size=100))
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    cio.save_kitti_bin(cloud, p1)
    cio.save_kitti_bin(cio.load_kitti_bin(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


# ------------------------------------------------------------------------ PLY

def test_ply_minimal(tmp_path):
    path = tmp_path / "four.ply"
    path.write_text("ply\nformat ascii 1.0\nelement vertex 4\n"
                    "property float x\nproperty float y\nproperty float z\n"
                    "end_header\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n")
    cloud = cio.load_ply(path)
    assert cloud.n == 4
    assert np.array_equal(cloud.points[3], [0.0, 0.0, 1.0])


def test_ply_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(1)
    cloud = cio.PointCloud(rng.normal(scale=100.0, size=(25, 3)))
    path = tmp_path / "rt.ply"
    cio.save_ply(cloud, path)
    assert np.array_equal(cio.load_ply(path).points, cloud.points)


def test_ply_binary_rejected(tmp_path):
    path = tmp_path / "bin.ply"
    path.write_bytes(b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
                     b"property float x\nproperty float y\nproperty float z\n"
                     b"end_header\n\x00\x00\x80?\x00\x00\x00@\x00\x00@@")
    with pytest.raises(ValueError, match="unsupported format"):
        cio.load_ply(path)


def test_ply_missing_field_named(tmp_path):
    path = tmp_path / "noz.ply"
    path.write_text("ply\nformat ascii 1.0\nelement vertex 1\n"
                    "property float x\nproperty float y\nend_header\n0 0\n")
    with pytest.raises(ValueError, match="property ... z"):
        cio.load_ply(path)


# ----------------------------------------------------------------- pose files

def test_pose_identity_line(tmp_path):
    path = tmp_path / "poses.txt"
    path.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n")
    poses = cio.parse_pose_file(path)
    assert len(poses) == 1
    assert np.array_equal(poses[0].rotation, np.eye(3))


def test_relative_transform_of_identical_poses(tmp_path):
    path = tmp_path / "poses.txt"
    line = "1 0 0 4 0 1 0 5 0 0 1 6\n"
    path.write_text(line + line)
    rel = cio.relative_transforms(cio.parse_pose_file(path))[0]
    assert np.abs(rel.rotation - np.eye(3)).max() < 1e-15
    assert np.abs(rel.translation).max() < 1e-15


def test_relative_transform_compose_invert_oracle(tmp_path):
    rng = np.random.default_rng(2)
    from test_transforms import random_transform
    a = random_transform(rng)
    b = random_transform(rng)
    ab = a.compose(b)
    path = tmp_path / "poses.txt"
    cio.save_pose_file([a, ab], path)
    rel = cio.relative_transforms(cio.parse_pose_file(path))[0]
    assert np.abs(rel.rotation - b.rotation).max() < 1e-12
    assert np.abs(rel.translation - b.translation).max() < 1e-12


# -------------------------------------------------------------- perturbations

def test_transform_ops():
    rng = np.random.default_rng(3)
    cloud = cio.PointCloud(rng.normal(size=(10, 3)))
    same = cio.apply_transform(cloud, RigidTransform.identity())
    assert np.array_equal(same.points, cloud.points)
    t = RigidTransform(np.eye(3), [1.0, 0, 0])
    assert np.array_equal(cio.apply_transform(cio.PointCloud([[0.0, 0, 0],
                                                              [1, 1, 1],
                                                              [2, 0, 0],
                                                              [0, 2, 0]]), t).points[0],
                          [1.0, 0.0, 0.0])


def test_noise_zero_sigma_identity():
    cloud = cio.PointCloud(np.ones((5, 3)))
    out = cio.add_gaussian_noise(cloud, 0.0, np.random.default_rng(0))
    assert np.array_equal(out.points, cloud.points)


def test_noise_sample_variance():
    rng = np.random.default_rng(4)
    n = 40_000  # > 1e5 coordinates
    cloud = cio.PointCloud(np.zeros((n, 3)))
    noisy = cio.add_gaussian_noise(cloud, 0.25, rng)
    var = noisy.points.var()
    assert 0.0615 <= var <= 0.0635


def test_noise_deterministic():
    cloud = cio.PointCloud(np.zeros((50, 3)))
    a = cio.add_gaussian_noise(cloud, 0.1, np.random.default_rng(9))
    b = cio.add_gaussian_noise(cloud, 0.1, np.random.default_rng(9))
    assert np.array_equal(a.points, b.points)


def test_crop_disjoint_region_is_identity():
    pts = np.array([[50.0, 25.0, 0.0], [55.0, 28.0, 1.0],
                    [59.0, 29.0, 0.5], [45.0, 20.0, 0.2]])
    out = cio.crop_region(cio.PointCloud(pts), (60, 30), (0.0, 0.0))
    assert np.array_equal(out.points, pts)


def test_crop_removes_single_inside_point():
    # bbox spans 60 x 30; only the first point falls in the lower-left 25 x 15 cut
    pts = np.array([[1.0, 1.0, 0.0], [59.0, 1.0, 0.0], [59.0, 29.0, 0.0],
                    [1.0, 29.0, 0.0], [0.0, 16.0, 0.0], [60.0, 30.0, 0.0]])
    out = cio.crop_region(cio.PointCloud(pts))
    assert out.n == pts.shape[0] - 1  # only (1, 1) falls inside the cut


def test_crop_grid_fraction():
    xs, ys = np.meshgrid(np.linspace(0, 60, 121), np.linspace(0, 30, 61))
    pts = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)])
    cloud = cio.PointCloud(pts)
    out = cio.crop_region(cloud)
    removed = cloud.n - out.n
    expected = (xs.ravel() < 25.0) & (ys.ravel() < 15.0)
    assert removed == expected.sum()
    assert abs(removed / cloud.n - 25 * 15 / (60 * 30)) < 0.02


def test_crop_refuses_to_empty_cloud():
    pts = np.array([[0.0, 0, 0], [1, 1, 0], [2, 2, 0], [3, 3, 0]])
    with pytest.raises(ValueError, match="at least 4"):
        cio.crop_region(cio.PointCloud(pts), (60, 30), (60, 30))


def test_downsample_contract():
    rng = np.random.default_rng(5)
    cloud = cio.PointCloud(rng.normal(size=(20, 3)))
    assert np.array_equal(cio.downsample(cloud, 20, rng).points, cloud.points)
    one = cio.downsample(cloud, 1, np.random.default_rng(1))
    assert any(np.array_equal(one.points[0], p) for p in cloud.points)
    a = cio.downsample(cloud, 7, np.random.default_rng(2))
    b = cio.downsample(cloud, 7, np.random.default_rng(2))
    assert np.array_equal(a.points, b.points)
    with pytest.raises(ValueError, match="downsample"):
        cio.downsample(cloud, 21, rng)


def test_downsample_order_preserving():
    cloud = cio.PointCloud(np.arange(30, dtype=float).reshape(10, 3))
    out = cio.downsample(cloud, 5, np.random.default_rng(3))
    assert (np.diff(out.points[:, 0]) > 0).all()


# ---------------------------------------------------------- dataset directory

def test_pair_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    from test_transforms import random_transform
    rec = cio.PairRecord(cio.PointCloud(rng.normal(size=(8, 3))),
                         cio.PointCloud(rng.normal(size=(8, 3))),
                         random_transform(rng), "pair_0003")
    cio.save_pair(tmp_path, rec)
    back = cio.load_pair(tmp_path, "pair_0003")
    assert np.array_equal(back.source.points, rec.source.points)
    assert np.array_equal(back.target.points, rec.target.points)
    assert np.abs(back.ground_truth.rotation - rec.ground_truth.rotation).max() < 1e-15
    assert cio.list_pair_ids(tmp_path) == ["pair_0003"]
