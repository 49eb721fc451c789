import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from advpose.serialize import (
    ChecksumMismatch,
    FormatVersionMismatch,
    read_container,
    sha256_file,
    write_container,
)


def roundtrip(tmp_path, meta, arrays, kind="test-kind", version=1):
    path = tmp_path / "blob.bin"
    write_container(path, kind, version, meta, arrays)
    return path, *read_container(path, kind, version)


def test_roundtrip_exact(tmp_path, rng):
    arrays = [("a", rng.normal(size=(3, 4))), ("scalar", np.asarray(2.5)), ("b", rng.normal(size=7))]
    path, meta, out = roundtrip(tmp_path, {"x": 1, "nested": {"y": [1, 2]}}, arrays)
    assert meta == {"x": 1, "nested": {"y": [1, 2]}}
    for name, arr in arrays:
        np.testing.assert_array_equal(out[name], arr)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20))
def test_roundtrip_lossless_floats(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("c") / "v.bin"
    arr = np.asarray(values, dtype=np.float64)
    write_container(path, "k", 1, {}, [("v", arr)])
    _, out = read_container(path, "k", 1)
    np.testing.assert_array_equal(out["v"], arr)


def test_deterministic_bytes(tmp_path, rng):
    arrays = [("a", rng.normal(size=5))]
    p1, p2 = tmp_path / "one.bin", tmp_path / "two.bin"
    write_container(p1, "k", 1, {"s": 3}, arrays)
    write_container(p2, "k", 1, {"s": 3}, arrays)
    assert sha256_file(p1) == sha256_file(p2)


def test_truncated_file_checksum_mismatch(tmp_path, rng):
    path = tmp_path / "t.bin"
    write_container(path, "k", 1, {}, [("a", rng.normal(size=64))])
    blob = path.read_bytes()
    for cut in (len(blob) - 1, len(blob) - 40, 30):
        path.write_bytes(blob[:cut])
        with pytest.raises(ChecksumMismatch):
            read_container(path, "k", 1)


def test_bitflip_checksum_mismatch(tmp_path, rng):
    path = tmp_path / "t.bin"
    write_container(path, "k", 1, {}, [("a", rng.normal(size=16))])
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(ChecksumMismatch):
        read_container(path, "k", 1)


def test_not_a_container(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"definitely not a container" * 4)
    with pytest.raises(ChecksumMismatch):
        read_container(path, "k", 1)


def test_newer_container_version_reports_both(tmp_path, rng):
    path = tmp_path / "t.bin"
    write_container(path, "k", 1, {}, [("a", rng.normal(size=4))])
    blob = bytearray(path.read_bytes())
    struct.pack_into("<I", blob, 8, 99)  # bump the container version field
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatVersionMismatch) as exc:
        read_container(path, "k", 1)
    assert "99" in str(exc.value) and "1" in str(exc.value)


def test_newer_kind_version_reports_both(tmp_path, rng):
    path = tmp_path / "t.bin"
    write_container(path, "k", 7, {}, [("a", rng.normal(size=4))])
    with pytest.raises(FormatVersionMismatch) as exc:
        read_container(path, "k", 1)
    assert "7" in str(exc.value) and "1" in str(exc.value)


def test_wrong_kind(tmp_path, rng):
    path = tmp_path / "t.bin"
    write_container(path, "checkpoint", 1, {}, [("a", rng.normal(size=4))])
    with pytest.raises(ValueError):
        read_container(path, "dataset", 1)


def test_missing_file_is_oserror(tmp_path):
    with pytest.raises(OSError):
        read_container(tmp_path / "nope.bin", "k", 1)


def test_duplicate_array_names_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_container(tmp_path / "d.bin", "k", 1, {}, [("a", np.zeros(1)), ("a", np.zeros(1))])


def test_payload_is_little_endian_float64(tmp_path):
    # layout check: header json declares shapes; payload bytes follow in order
    path = tmp_path / "t.bin"
    arr = np.array([1.0, -2.0, 3.5])
    write_container(path, "k", 1, {}, [("a", arr)])
    blob = path.read_bytes()
    magic, cver, hlen = struct.unpack_from("<8sIQ", blob, 0)
    assert magic == b"ADVPOSE\x01" and cver == 1
    header = json.loads(blob[20 : 20 + hlen])
    assert header["arrays"] == [{"name": "a", "shape": [3]}]
    payload = blob[20 + hlen : 20 + hlen + 24]
    np.testing.assert_array_equal(np.frombuffer(payload, dtype="<f8"), arr)
