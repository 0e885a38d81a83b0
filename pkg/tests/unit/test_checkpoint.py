"""Unit tests for the binary checkpoint codec."""

import struct

import numpy as np
import pytest

from core.checkpoint import MAGIC, VERSION, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from core.errors import CheckpointError


class TestCheckpointCodec:
    """Test encoding, decoding and corruption handling."""

    @pytest.fixture
    def state(self, rng):
        """Mixed-rank parameter state."""
        return {
            "backbone.patch1.weight": rng.normal(size=(48, 8)),
            "decoder.head.bias": rng.normal(size=(1,)),
            "stage1.ape": rng.normal(size=(4, 4, 8)),
        }

    def test_header_layout(self, state):
        """Test magic bytes and little-endian version."""
        payload = encode_checkpoint(state)
        assert payload[:4] == MAGIC
        assert struct.unpack("<I", payload[4:8])[0] == VERSION

    def test_first_record_layout(self):
        """Test one record is name length, name, rank, extents, f64 payload."""
        payload = encode_checkpoint({"ab": np.array([[1.0, 2.0]])})
        assert struct.unpack("<I", payload[8:12])[0] == 2
        assert payload[12:14] == b"ab"
        assert struct.unpack("<I", payload[14:18])[0] == 2
        assert struct.unpack("<2I", payload[18:26]) == (1, 2)
        assert struct.unpack("<2d", payload[26:42]) == (1.0, 2.0)
        assert len(payload) == 42

    def test_decode_preserves_values_and_order(self, state):
        """Test bit-exact values in registration order."""
        decoded = decode_checkpoint(encode_checkpoint(state))
        assert list(decoded) == list(state)
        for name, values in state.items():
            np.testing.assert_array_equal(decoded[name], values)

    def test_bad_magic(self, state):
        """Test non-checkpoint payloads are rejected."""
        with pytest.raises(CheckpointError):
            decode_checkpoint(b"XXXX" + encode_checkpoint(state)[4:])

    def test_unsupported_version(self, state):
        """Test other format versions are rejected."""
        payload = bytearray(encode_checkpoint(state))
        payload[4:8] = struct.pack("<I", VERSION + 1)
        with pytest.raises(CheckpointError):
            decode_checkpoint(bytes(payload))

    def test_truncated_payload(self, state):
        """Test truncation anywhere after the header is detected."""
        payload = encode_checkpoint(state)
        with pytest.raises(CheckpointError):
            decode_checkpoint(payload[:6])
        with pytest.raises(CheckpointError):
            decode_checkpoint(payload[:-3])

    def test_undecodable_record_name(self):
        """Test a record name that is not UTF-8 is a checkpoint error."""
        payload = bytearray(encode_checkpoint({"ab": np.zeros(2)}))
        payload[12:14] = b"\xff\xfe"
        with pytest.raises(CheckpointError, match="UTF-8"):
            decode_checkpoint(bytes(payload))

    def test_save_and_load_file(self, state, tmp_path):
        """Test file round trip and missing-file errors."""
        path = save_checkpoint(state, tmp_path / "runs" / "best.ckpt")
        assert path.exists()
        loaded = load_checkpoint(path)
        for name, values in state.items():
            np.testing.assert_array_equal(loaded[name], values)
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "missing.ckpt")
