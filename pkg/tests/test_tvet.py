import hashlib
import struct

import numpy as np
import pytest

from metattr import tvet


def test_header_layout():
    blob = tvet.encode(np.zeros((2, 3), dtype=np.float32))
    assert blob[:4] == bytes([0x54, 0x56, 0x45, 0x54])
    assert blob[4:8] == bytes([1, 1, 2, 0])
    assert struct.unpack("<2Q", blob[8:24]) == (2, 3)
    assert len(blob) == 24 + 6 * 4


def test_payload_is_little_endian_row_major():
    blob = tvet.encode(np.array([[1.0, 2.0]], dtype=np.float32))
    assert blob[-8:] == struct.pack("<2f", 1.0, 2.0)


@pytest.mark.parametrize("shape", [(), (0,), (5,), (3, 4), (2, 3, 4, 1)])
def test_round_trip(shape, rng):
    arr = rng.standard_normal(shape).astype(np.float32)
    back = tvet.decode(tvet.encode(arr))
    assert back.shape == arr.shape and back.dtype == np.float32
    np.testing.assert_array_equal(back, arr)


def test_save_returns_file_hash(tmp_path, rng):
    arr = rng.standard_normal((4, 4))
    digest = tvet.save(tmp_path / "a.tvet", arr)
    assert digest == hashlib.sha256((tmp_path / "a.tvet").read_bytes()).hexdigest()
    np.testing.assert_array_equal(tvet.load(tmp_path / "a.tvet", digest), arr.astype(np.float32))


def test_hash_mismatch_rejected(tmp_path):
    tvet.save(tmp_path / "a.tvet", np.ones(3))
    with pytest.raises(tvet.TVETError, match="sha256"):
        tvet.load(tmp_path / "a.tvet", "0" * 64)


@pytest.mark.parametrize("mutate", [
    lambda b: b"XVET" + b[4:],
    lambda b: b[:4] + bytes([2]) + b[5:],
    lambda b: b[:5] + bytes([2]) + b[6:],
    lambda b: b[:-1],
    lambda b: b[:10],
])
def test_corrupt_files_rejected(mutate):
    with pytest.raises(tvet.TVETError):
        tvet.decode(mutate(tvet.encode(np.ones((2, 2)))))
