"""Tests for coldstart_lab.checkpoint module."""

from __future__ import annotations

import json
import struct

import numpy as np
import pytest

from coldstart_lab.checkpoint import MAGIC, CheckpointContainer
from coldstart_lab.errors import DataError


def _container(precision: int = 32) -> CheckpointContainer:
    rng = np.random.default_rng(0)
    c = CheckpointContainer(config={"seed": 1}, precision=precision)
    c.add("emb/user", rng.normal(size=(3, 4)))
    c.add("aug/Wg", rng.normal(size=(4, 4)))
    c.add("ae_user/b1", np.zeros(2))
    return c


class TestCheckpointContainer:
    def test_roundtrip_is_lossless_in_64_bit(self):
        c = _container(64)
        loaded = CheckpointContainer.from_bytes(c.to_bytes())
        assert list(loaded.tensors) == list(c.tensors)
        for name, arr in c.tensors.items():
            np.testing.assert_array_equal(loaded.tensors[name], arr)
        assert loaded.config == {"seed": 1}
        assert loaded.precision == 64

    def test_roundtrip_bytes_identical(self):
        """save(load(save(x))) reproduces the same bytes."""
        blob = _container(32).to_bytes()
        assert CheckpointContainer.from_bytes(blob).to_bytes() == blob

    def test_32_bit_rounds_to_float32(self):
        c = _container(32)
        loaded = CheckpointContainer.from_bytes(c.to_bytes())
        np.testing.assert_array_equal(loaded.tensors["emb/user"], c.tensors["emb/user"].astype(np.float32))

    def test_header_layout(self):
        blob = _container().to_bytes()
        magic, version, manifest_len = struct.unpack_from("<4sII", blob)
        assert magic == MAGIC
        assert version == 1
        manifest = json.loads(blob[12 : 12 + manifest_len])
        offsets = [(e["offset"], e["name"]) for e in manifest["tensors"]]
        assert offsets[0] == (0, "emb/user")
        assert offsets[1][0] == 3 * 4 * 4

    def test_save_and_load(self, tmp_path):
        path = tmp_path / "nested" / "model.tmag"
        _container().save(path)
        assert CheckpointContainer.load(path).tensors["aug/Wg"].shape == (4, 4)

    def test_with_prefix(self):
        assert list(_container().with_prefix("ae_user")) == ["b1"]

    def test_bad_magic(self):
        blob = b"XXXX" + _container().to_bytes()[4:]
        with pytest.raises(DataError, match="magic"):
            CheckpointContainer.from_bytes(blob)

    def test_bad_version(self):
        blob = bytearray(_container().to_bytes())
        blob[4:8] = struct.pack("<I", 9)
        with pytest.raises(DataError, match="version"):
            CheckpointContainer.from_bytes(bytes(blob))

    def test_truncated_payload(self):
        blob = _container().to_bytes()
        with pytest.raises(DataError, match="past the end"):
            CheckpointContainer.from_bytes(blob[:-8])

    def test_unsupported_precision(self):
        with pytest.raises(DataError):
            CheckpointContainer(precision=16)
