"""Tensor exchange container: byte layout and failure modes."""

import json
import struct

import numpy as np
import pytest

from spinepipe import tensorio
from spinepipe.errors import BadMagic, HeaderMismatch, TruncatedData


def read_raw(path):
    return path.read_bytes()


class TestLayout:
    def test_reference_layout(self, tmp_path):
        path = tmp_path / "t.tnsr"
        tensorio.write_tensor(path, np.array([[1.0, 2.0], [3.0, 4.0]]))
        data = read_raw(path)
        assert data[:8] == b"TNSR0001"
        (header_len,) = struct.unpack_from("<I", data, 8)
        header = json.loads(data[12 : 12 + header_len].decode("ascii"))
        assert header == {"dtype": "f32", "order": "row-major", "shape": [2, 2]}
        payload = data[12 + header_len :]
        assert len(payload) == 16
        assert struct.unpack("<4f", payload) == (1.0, 2.0, 3.0, 4.0)

    @pytest.mark.parametrize("shape", [(), (0,), (5,), (3, 4), (2, 0, 3), (2, 3, 4, 5)])
    def test_round_trip_bit_exact(self, tmp_path, shape):
        rng = np.random.default_rng(hash(shape) % 1000)
        arr = rng.standard_normal(shape).astype(np.float32)
        path = tmp_path / "t.tnsr"
        tensorio.write_tensor(path, arr)
        back = tensorio.read_tensor(path)
        assert back.shape == arr.shape
        assert back.tobytes() == arr.tobytes()

    def test_non_finite_values_preserved(self, tmp_path):
        arr = np.array([np.nan, np.inf, -np.inf, -0.0], dtype=np.float32)
        path = tmp_path / "t.tnsr"
        tensorio.write_tensor(path, arr)
        assert tensorio.read_tensor(path).tobytes() == arr.tobytes()

    def test_float64_input_cast(self, tmp_path):
        path = tmp_path / "t.tnsr"
        tensorio.write_tensor(path, np.array([1.0 / 3.0], dtype=np.float64))
        back = tensorio.read_tensor(path)
        assert back.dtype == np.dtype("<f4")
        assert back[0] == np.float32(1.0 / 3.0)


class TestFailureModes:
    def _write(self, tmp_path, mutate):
        path = tmp_path / "t.tnsr"
        tensorio.write_tensor(path, np.zeros((2, 2), dtype=np.float32))
        path.write_bytes(mutate(read_raw(path)))
        return path

    def test_bad_magic(self, tmp_path):
        path = self._write(tmp_path, lambda d: b"XXXX0001" + d[8:])
        with pytest.raises(BadMagic):
            tensorio.read_tensor(path)

    def test_missing_header_length(self, tmp_path):
        path = self._write(tmp_path, lambda d: d[:10])
        with pytest.raises(TruncatedData):
            tensorio.read_tensor(path)

    def test_header_shorter_than_declared(self, tmp_path):
        path = self._write(tmp_path, lambda d: d[:20])
        with pytest.raises(TruncatedData):
            tensorio.read_tensor(path)

    def test_short_payload(self, tmp_path):
        path = self._write(tmp_path, lambda d: d[:-4])
        with pytest.raises(TruncatedData):
            tensorio.read_tensor(path)

    def test_long_payload(self, tmp_path):
        path = self._write(tmp_path, lambda d: d + b"\x00\x00\x00\x00")
        with pytest.raises(HeaderMismatch):
            tensorio.read_tensor(path)

    def _with_header(self, tmp_path, header_bytes, payload=b""):
        path = tmp_path / "t.tnsr"
        path.write_bytes(
            b"TNSR0001" + struct.pack("<I", len(header_bytes)) + header_bytes + payload
        )
        return path

    def test_unparseable_header(self, tmp_path):
        path = self._with_header(tmp_path, b"{not json")
        with pytest.raises(HeaderMismatch):
            tensorio.read_tensor(path)

    def test_wrong_dtype_rejected(self, tmp_path):
        header = json.dumps(
            {"dtype": "f64", "order": "row-major", "shape": [1]}
        ).encode()
        path = self._with_header(tmp_path, header, b"\x00" * 8)
        with pytest.raises(HeaderMismatch):
            tensorio.read_tensor(path)

    def test_wrong_order_rejected(self, tmp_path):
        header = json.dumps(
            {"dtype": "f32", "order": "col-major", "shape": [1]}
        ).encode()
        path = self._with_header(tmp_path, header, b"\x00" * 4)
        with pytest.raises(HeaderMismatch):
            tensorio.read_tensor(path)

    @pytest.mark.parametrize("shape", [[-1], [1.5], "nope", None])
    def test_bad_shape_rejected(self, tmp_path, shape):
        header = json.dumps(
            {"dtype": "f32", "order": "row-major", "shape": shape}
        ).encode()
        path = self._with_header(tmp_path, header)
        with pytest.raises(HeaderMismatch):
            tensorio.read_tensor(path)

    def test_non_object_header_rejected(self, tmp_path):
        path = self._with_header(tmp_path, b"[1,2]")
        with pytest.raises(HeaderMismatch):
            tensorio.read_tensor(path)
