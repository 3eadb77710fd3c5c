"""DNT1 container format: golden bytes, round trips, malformed inputs."""

import struct

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from sparsecp import DenseTensor, DntFormatError, read_dnt, read_matrix, write_dnt


def golden_bytes(shape, flat):
    """Hand-assembled DNT1 byte stream: magic, order, extents, payload."""
    out = b"DNT1" + struct.pack("<I", len(shape))
    for extent in shape:
        out += struct.pack("<Q", extent)
    out += np.asarray(flat, dtype="<f8").tobytes()
    return out


class TestGoldenBytes:
    def test_write_matches_hand_assembled_stream(self, tmp_path):
        path = tmp_path / "t.dnt"
        t = DenseTensor.from_flat((2, 3), np.arange(1.0, 7.0))
        write_dnt(path, t)
        assert path.read_bytes() == golden_bytes((2, 3), np.arange(1.0, 7.0))

    def test_read_hand_assembled_stream(self, tmp_path):
        path = tmp_path / "t.dnt"
        path.write_bytes(golden_bytes((2, 2, 2), np.arange(1.0, 9.0)))
        t = read_dnt(path)
        assert t.shape == (2, 2, 2)
        # first-mode-fastest payload ordering
        assert t.data[1, 0, 0] == 2.0
        assert t.data[0, 1, 0] == 3.0
        assert t.data[0, 0, 1] == 5.0

    def test_header_sizes(self, tmp_path):
        path = tmp_path / "t.dnt"
        write_dnt(path, DenseTensor(np.zeros((3, 4, 5))))
        raw = path.read_bytes()
        assert len(raw) == 8 + 3 * 8 + 60 * 8
        assert raw[:4] == b"DNT1"
        assert struct.unpack("<I", raw[4:8])[0] == 3
        assert struct.unpack("<3Q", raw[8:32]) == (3, 4, 5)


class TestRoundTrip:
    @pytest.mark.parametrize("shape", [(7,), (3, 4), (2, 3, 4), (2, 2, 2, 3)])
    def test_round_trip(self, rng, tmp_path, shape):
        arr = rng.random(shape)
        path = tmp_path / "t.dnt"
        write_dnt(path, DenseTensor(arr))
        assert_array_equal(read_dnt(path).data, arr)

    def test_accepts_plain_arrays(self, rng, tmp_path):
        arr = rng.random((4, 3))
        path = tmp_path / "t.dnt"
        write_dnt(path, arr)
        assert_array_equal(read_matrix(path), arr)

    def test_exact_bit_preservation(self, tmp_path):
        # values with no short decimal representation survive exactly
        arr = np.array([[np.pi, np.e], [1.0 / 3.0, np.nextafter(0.0, 1.0)]])
        path = tmp_path / "t.dnt"
        write_dnt(path, arr)
        assert read_dnt(path).data.tobytes() == np.asfortranarray(arr).tobytes()


class TestMalformed:
    def make(self, tmp_path, payload):
        path = tmp_path / "bad.dnt"
        path.write_bytes(payload)
        return path

    def test_short_header(self, tmp_path):
        with pytest.raises(DntFormatError):
            read_dnt(self.make(tmp_path, b"DNT"))

    def test_bad_magic(self, tmp_path):
        good = golden_bytes((2, 2), np.ones(4))
        with pytest.raises(DntFormatError):
            read_dnt(self.make(tmp_path, b"XXXX" + good[4:]))

    def test_zero_order(self, tmp_path):
        with pytest.raises(DntFormatError):
            read_dnt(self.make(tmp_path, b"DNT1" + struct.pack("<I", 0)))

    def test_truncated_extents(self, tmp_path):
        payload = b"DNT1" + struct.pack("<I", 3) + struct.pack("<Q", 2)
        with pytest.raises(DntFormatError):
            read_dnt(self.make(tmp_path, payload))

    def test_zero_extent(self, tmp_path):
        payload = b"DNT1" + struct.pack("<I", 2) + struct.pack("<QQ", 2, 0)
        with pytest.raises(DntFormatError):
            read_dnt(self.make(tmp_path, payload))

    def test_truncated_payload(self, tmp_path):
        good = golden_bytes((2, 2), np.ones(4))
        with pytest.raises(DntFormatError):
            read_dnt(self.make(tmp_path, good[:-8]))

    def test_trailing_bytes(self, tmp_path):
        good = golden_bytes((2, 2), np.ones(4))
        with pytest.raises(DntFormatError):
            read_dnt(self.make(tmp_path, good + b"\x00"))

    def test_nonfinite_payload(self, tmp_path):
        bad = golden_bytes((2,), [1.0, np.nan])
        with pytest.raises(DntFormatError):
            read_dnt(self.make(tmp_path, bad))

    def test_matrix_reader_rejects_non_matrix(self, tmp_path):
        path = tmp_path / "t.dnt"
        write_dnt(path, DenseTensor(np.zeros((2, 2, 2))))
        with pytest.raises(DntFormatError):
            read_matrix(path)

    def test_error_message_names_file(self, tmp_path):
        path = self.make(tmp_path, b"XXXXXXXXXXXX")
        with pytest.raises(DntFormatError, match="bad.dnt"):
            read_dnt(path)
