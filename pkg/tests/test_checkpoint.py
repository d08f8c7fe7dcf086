"""Binary checkpoint container: integrity, determinism, atomicity."""

import os

import numpy as np
import pytest

from bnnkit.checkpoint import (
    CheckpointError,
    checkpoint_hash,
    load_checkpoint,
    save_checkpoint,
)


def sample_arrays():
    rng = np.random.default_rng(0)
    return {
        "conv.weight": rng.normal(size=(4, 3, 3, 3)).astype(np.float32),
        "bn.gamma": rng.normal(size=4),
        "codes": rng.integers(0, 255, size=(3, 8)),
        "flags": np.array([0, 1, 1], dtype=np.uint8),
    }


class TestRoundtrip:
    def test_arrays_and_meta(self, tmp_path):
        path = tmp_path / "model.ckpt"
        meta = {"mode": "binary", "step": 42, "nested": {"lr": 1e-3}}
        arrays = sample_arrays()
        save_checkpoint(path, meta, arrays)
        got_meta, got_arrays = load_checkpoint(path)
        for k in meta:
            assert got_meta[k] == meta[k]
        assert set(got_arrays) == set(arrays)
        for k in arrays:
            assert got_arrays[k].dtype == arrays[k].dtype
            assert np.array_equal(got_arrays[k], arrays[k])

    def test_empty_arrays_ok(self, tmp_path):
        path = tmp_path / "empty.ckpt"
        save_checkpoint(path, {"note": "none"}, {})
        meta, arrays = load_checkpoint(path)
        assert arrays == {}


class TestDeterminism:
    def test_same_content_same_bytes(self, tmp_path):
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(a, {"x": 1}, sample_arrays())
        save_checkpoint(b, {"x": 1}, sample_arrays())
        assert a.read_bytes() == b.read_bytes()
        assert checkpoint_hash(a) == checkpoint_hash(b)

    def test_key_order_irrelevant(self, tmp_path):
        arrays = sample_arrays()
        rev = dict(reversed(list(arrays.items())))
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(a, {}, arrays)
        save_checkpoint(b, {}, rev)
        assert a.read_bytes() == b.read_bytes()

    def test_different_content_different_hash(self, tmp_path):
        arrays = sample_arrays()
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(a, {}, arrays)
        arrays["bn.gamma"] = arrays["bn.gamma"] + 1e-6
        save_checkpoint(b, {}, arrays)
        assert checkpoint_hash(a) != checkpoint_hash(b)


class TestIntegrity:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.ckpt"
        save_checkpoint(path, {}, sample_arrays())
        raw = bytearray(path.read_bytes())
        raw[:4] = b"JUNK"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_corrupted_payload_detected(self, tmp_path):
        path = tmp_path / "x.ckpt"
        save_checkpoint(path, {}, sample_arrays())
        raw = bytearray(path.read_bytes())
        raw[-1] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "x.ckpt"
        save_checkpoint(path, {}, sample_arrays())
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 20])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_no_tmp_file_left_behind(self, tmp_path):
        path = tmp_path / "x.ckpt"
        save_checkpoint(path, {}, sample_arrays())
        leftovers = [f for f in os.listdir(tmp_path) if f != "x.ckpt"]
        assert leftovers == []
