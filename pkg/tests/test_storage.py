import numpy as np
import pytest

from groupscope.errors import FormatError, VersionMismatch
from groupscope.storage import pack_strings, read_container, unpack_strings, write_container


def _write(path):
    arrays = {"f": np.linspace(0, 1, 7), "i": np.arange(12, dtype=np.int32).reshape(3, 4),
              "e": np.zeros(0, dtype=np.int64), **pack_strings(["a", "", "naïve", "x" * 300])}
    write_container(path, "demo", {"n": 1}, {"s1": ({"tag": "one"}, arrays), "s2": ({}, {})})
    return arrays


def test_round_trip(tmp_path):
    arrays = _write(tmp_path / "x.gsix")
    meta, segs = read_container(tmp_path / "x.gsix", "demo")
    assert meta == {"n": 1} and set(segs) == {"s1", "s2"}
    seg_meta, got = segs["s1"]
    assert seg_meta == {"tag": "one"}
    for name, arr in arrays.items():
        assert got[name].dtype == arr.dtype and np.array_equal(got[name], arr)
    assert unpack_strings(got["bytes"], got["offsets"]) == ["a", "", "naïve", "x" * 300]


def test_wrong_kind_and_magic(tmp_path):
    _write(tmp_path / "x.gsix")
    with pytest.raises(FormatError):
        read_container(tmp_path / "x.gsix", "other")
    raw = bytearray((tmp_path / "x.gsix").read_bytes())
    raw[0:4] = b"NOPE"
    (tmp_path / "y.gsix").write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        read_container(tmp_path / "y.gsix", "demo")


def test_version_mismatch(tmp_path):
    _write(tmp_path / "x.gsix")
    raw = bytearray((tmp_path / "x.gsix").read_bytes())
    raw[4] = 9
    (tmp_path / "x.gsix").write_bytes(bytes(raw))
    with pytest.raises(VersionMismatch):
        read_container(tmp_path / "x.gsix", "demo")


def test_truncation_and_corruption(tmp_path):
    _write(tmp_path / "x.gsix")
    raw = (tmp_path / "x.gsix").read_bytes()
    for cut in (3, 20, len(raw) - 5):
        (tmp_path / "t.gsix").write_bytes(raw[:cut])
        with pytest.raises(FormatError):
            read_container(tmp_path / "t.gsix", "demo")
    flipped = bytearray(raw)
    flipped[-3] ^= 0xFF
    (tmp_path / "c.gsix").write_bytes(bytes(flipped))
    with pytest.raises(FormatError, match="checksum"):
        read_container(tmp_path / "c.gsix", "demo")
