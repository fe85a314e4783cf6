"""Model file format: bitwise round trips and corruption detection."""

import struct

import numpy as np
import pytest

from difformer.serialization import load_model, save_model
from difformer.tensor import ParameterStore


def random_store(seed=0):
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    store.add("alpha.w", rng.normal(size=(4, 7)))
    store.add("alpha.b", rng.normal(size=(1, 7)))
    store.add("zeta", rng.normal(size=(3, 3)))
    return store


def test_roundtrip_bitwise(tmp_path):
    store = random_store()
    path = tmp_path / "m.pdif"
    save_model(store, path)
    back = load_model(path)
    assert back.names() == store.names()
    for name in store.names():
        assert np.array_equal(back[name].data, store[name].data)


def test_save_is_deterministic(tmp_path):
    p1, p2 = tmp_path / "a.pdif", tmp_path / "b.pdif"
    save_model(random_store(1), p1)
    save_model(random_store(1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_checksum_detects_corruption(tmp_path):
    path = tmp_path / "m.pdif"
    save_model(random_store(2), path)
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="checksum|name|truncated|rank"):
        load_model(path)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "m.pdif"
    path.write_bytes(b"NOPE!" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        load_model(path)


def test_truncation_rejected(tmp_path):
    path = tmp_path / "m.pdif"
    save_model(random_store(3), path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-4])
    with pytest.raises(ValueError, match="truncated"):
        load_model(path)


def test_checksum_is_bit_pattern_sum(tmp_path):
    store = ParameterStore()
    store.add("x", np.array([[1.5, -2.25]]))
    path = tmp_path / "m.pdif"
    save_model(store, path)
    blob = path.read_bytes()
    stated = struct.unpack("<Q", blob[-8:])[0]
    expected = int(np.array([1.5, -2.25]).view(np.uint64).sum(dtype=np.uint64))
    assert stated == expected
