import struct

import numpy as np
import pytest

from selftrain import checkpoint
from selftrain.errors import CorruptFile, VersionMismatch, VocabHashMismatch

H = "ab" * 32


@pytest.fixture
def arrays(rng):
    return [rng.normal(size=(5, 3)), rng.normal(size=4), np.zeros((0, 2))]


def test_round_trip(arrays):
    vh, meta, out = checkpoint.loads(checkpoint.dumps(checkpoint.MODEL_TAG, H, {"a": 1}, arrays),
                                     checkpoint.MODEL_TAG)
    assert vh == H and meta == {"a": 1}
    for a, b in zip(arrays, out):
        assert a.shape == b.shape and a.tobytes() == b.tobytes()


def test_layout_header(arrays):
    blob = checkpoint.dumps(checkpoint.INIT_TAG, H, {}, arrays)
    assert blob[:4] == b"STPI"
    assert struct.unpack_from("<H", blob, 4)[0] == checkpoint.FORMAT_VERSION
    assert blob[6:70].decode() == H


def test_payload_is_little_endian_f8(rng):
    a = rng.normal(size=3)
    blob = checkpoint.dumps(checkpoint.MODEL_TAG, H, {}, [a])
    assert blob[-4 - 24:-4] == a.astype("<f8").tobytes()


@pytest.mark.parametrize("cut", [1, 10, 50])
def test_truncated(arrays, cut):
    blob = checkpoint.dumps(checkpoint.MODEL_TAG, H, {}, arrays)
    with pytest.raises(CorruptFile):
        checkpoint.loads(blob[:-cut], checkpoint.MODEL_TAG)


def test_bit_flip(arrays):
    blob = bytearray(checkpoint.dumps(checkpoint.MODEL_TAG, H, {}, arrays))
    blob[100] ^= 1
    with pytest.raises(CorruptFile):
        checkpoint.loads(bytes(blob), checkpoint.MODEL_TAG)


def test_wrong_tag(arrays):
    blob = checkpoint.dumps(checkpoint.INIT_TAG, H, {}, arrays)
    with pytest.raises(CorruptFile):
        checkpoint.loads(blob, checkpoint.MODEL_TAG)


def test_version_mismatch(arrays):
    blob = bytearray(checkpoint.dumps(checkpoint.MODEL_TAG, H, {}, arrays))
    struct.pack_into("<H", blob, 4, checkpoint.FORMAT_VERSION + 1)
    with pytest.raises(VersionMismatch):
        checkpoint.loads(bytes(blob), checkpoint.MODEL_TAG)


def test_vocab_hash_mismatch(arrays):
    blob = checkpoint.dumps(checkpoint.MODEL_TAG, H, {}, arrays)
    with pytest.raises(VocabHashMismatch):
        checkpoint.loads(blob, checkpoint.MODEL_TAG, "cd" * 32)
