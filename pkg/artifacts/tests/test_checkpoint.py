"""
Tests for the versioned binary checkpoint container.
"""

import struct

import numpy as np
import pytest

from utils.checkpoint import FORMAT_VERSION, MAGIC, Checkpoint, decode_checkpoint, encode_checkpoint
from utils.errors import FormatError


# --------------------------------------------------------------------------
# Helper: a checkpoint covering every dtype tag
# --------------------------------------------------------------------------

def _checkpoint():
    rng = np.random.default_rng(0)
    return Checkpoint(
        architecture="test/arch",
        shape=(28, 28, 1),
        parameters={
            "layer.weight": rng.standard_normal((4, 3)).astype(np.float32),
            "layer.bias": rng.standard_normal(4).astype(np.float64),
            "bn.num_batches_tracked": np.asarray(7, dtype=np.int64),
            "empty": np.zeros((0, 5), dtype=np.float32),
        },
        metadata={"latent_dim": 100, "note": "ok"},
    )


def test_round_trip_is_bit_exact():
    original = _checkpoint()
    decoded = decode_checkpoint(encode_checkpoint(original))

    assert decoded.architecture == original.architecture
    assert decoded.shape == original.shape
    assert decoded.metadata == original.metadata
    assert set(decoded.parameters) == set(original.parameters)
    for name, array in original.parameters.items():
        assert decoded.parameters[name].dtype == array.dtype
        assert decoded.parameters[name].shape == array.shape
        assert decoded.parameters[name].tobytes() == array.tobytes()


def test_encoding_is_deterministic():
    assert encode_checkpoint(_checkpoint()) == encode_checkpoint(_checkpoint())


def test_header_layout():
    payload = encode_checkpoint(_checkpoint())
    assert payload[:8] == MAGIC
    assert struct.unpack("<H", payload[8:10])[0] == FORMAT_VERSION


def test_bad_magic():
    payload = bytearray(encode_checkpoint(_checkpoint()))
    payload[0] ^= 0xFF
    with pytest.raises(FormatError):
        decode_checkpoint(bytes(payload))


def test_version_mismatch():
    payload = bytearray(encode_checkpoint(_checkpoint()))
    payload[8:10] = struct.pack("<H", FORMAT_VERSION + 1)
    with pytest.raises(FormatError):
        decode_checkpoint(bytes(payload))


@pytest.mark.parametrize("keep", [0, 5, 9, 20, 60, -1])
def test_truncated_payload(keep):
    payload = encode_checkpoint(_checkpoint())
    with pytest.raises(FormatError):
        decode_checkpoint(payload[:keep])


def test_trailing_bytes():
    with pytest.raises(FormatError):
        decode_checkpoint(encode_checkpoint(_checkpoint()) + b"\x00")


def test_unsupported_dtype():
    checkpoint = Checkpoint("x", (1,), {"w": np.zeros(2, dtype=np.int16)})
    with pytest.raises(FormatError):
        encode_checkpoint(checkpoint)
