"""Binary container round-trips and corruption reporting."""

import numpy as np
import pytest

from gmixpost.container import read_array, write_array
from gmixpost.errors import FormatError


class TestContainer:
    def test_roundtrip_values_and_header(self, tmp_path, rng):
        path = tmp_path / "x.bin"
        arr = rng.standard_normal((3, 5))
        write_array(path, arr, role="x", seed=7, extra={"chain": 2})
        back, header = read_array(path)
        assert np.array_equal(back, arr)
        assert header["role"] == "x"
        assert header["seed"] == 7
        assert header["chain"] == 2
        assert header["dtype"] == "f64le"

    def test_write_read_write_is_byte_identical(self, tmp_path, rng):
        arr = rng.standard_normal((4, 2))
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        write_array(p1, arr, role="w", seed=1)
        back, header = read_array(p1)
        write_array(p2, back, role=header["role"], seed=header["seed"])
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(FormatError) as err:
            read_array(path)
        assert err.value.offset == 0

    def test_truncated_payload_reports_offset(self, tmp_path, rng):
        path = tmp_path / "t.bin"
        write_array(path, rng.standard_normal(8), role="x", seed=0)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(FormatError) as err:
            read_array(path)
        assert err.value.offset is not None

    def test_header_garbage(self, tmp_path, rng):
        path = tmp_path / "g.bin"
        write_array(path, rng.standard_normal(4), role="x", seed=0)
        blob = bytearray(path.read_bytes())
        blob[10] = 0xFF  # corrupt the JSON header
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError):
            read_array(path)
