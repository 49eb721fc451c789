"""Single-file binary container used by dataset and checkpoint files.

Layout (all integers little-endian, documented in README.md):

    bytes 0..7    magic b"ADVPOSE\\x01"
    bytes 8..11   uint32 container format version (currently 1)
    bytes 12..19  uint64 header length H
    bytes 20..    header: UTF-8 JSON with sorted keys:
                    {"kind": str, "version": int, "meta": {...},
                     "arrays": [{"name": str, "shape": [ints]}, ...]}
    ...           payload: all arrays as float64 little-endian, C order,
                  concatenated in header order
    last 32       SHA-256 digest of every preceding byte

Any structural damage (bad magic, truncation, bit flips) reads as
ChecksumMismatch; a partial object is never returned. Files written by a
newer format version raise FormatVersionMismatch before any payload parse.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ADVPOSE\x01"
CONTAINER_VERSION = 1
_PRELUDE = struct.Struct("<8sIQ")
_DIGEST_LEN = 32


class ChecksumMismatch(ValueError):
    """File is truncated, corrupted, or not a container at all."""


class FormatVersionMismatch(ValueError):
    pass


def write_container(path, kind: str, version: int, meta: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    """Write a container atomically (tmp file + rename)."""
    names = [n for n, _ in arrays]
    if len(set(names)) != len(names):
        raise ValueError("array names must be unique")
    header = {
        "kind": kind,
        "version": int(version),
        "meta": meta,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    h = hashlib.sha256()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        for chunk in (_PRELUDE.pack(MAGIC, CONTAINER_VERSION, len(head)), head):
            f.write(chunk)
            h.update(chunk)
        for _, a in arrays:
            raw = np.ascontiguousarray(a, dtype="<f8").tobytes()
            f.write(raw)
            h.update(raw)
        f.write(h.digest())
    tmp.replace(path)


def read_container(path, expect_kind: str, supported_version: int) -> tuple[dict, dict]:
    """Read and verify a container; returns (meta, {name: array}).

    Raises FormatVersionMismatch when the file's container or kind version
    is newer than supported, ChecksumMismatch on any structural damage, and
    ValueError when the kind is not the expected one.
    """
    blob = Path(path).read_bytes()
    if len(blob) < _PRELUDE.size + _DIGEST_LEN:
        raise ChecksumMismatch(f"{path}: file too short to be a container")
    magic, cver, hlen = _PRELUDE.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ChecksumMismatch(f"{path}: bad magic bytes")
    if cver > CONTAINER_VERSION:
        raise FormatVersionMismatch(
            f"{path}: container format version {cver}, this build reads version {CONTAINER_VERSION}"
        )
    digest = blob[-_DIGEST_LEN:]
    if hashlib.sha256(blob[:-_DIGEST_LEN]).digest() != digest:
        raise ChecksumMismatch(f"{path}: SHA-256 digest does not match (truncated or corrupted file)")
    try:
        header = json.loads(blob[_PRELUDE.size : _PRELUDE.size + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ChecksumMismatch(f"{path}: unreadable header ({e})") from e
    if header.get("kind") != expect_kind:
        raise ValueError(f"{path}: container holds {header.get('kind')!r}, expected {expect_kind!r}")
    if header["version"] > supported_version:
        raise FormatVersionMismatch(
            f"{path}: {expect_kind} version {header['version']}, this build reads version {supported_version}"
        )
    arrays: dict[str, np.ndarray] = {}
    off = _PRELUDE.size + hlen
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = off + 8 * count
        if end > len(blob) - _DIGEST_LEN:
            raise ChecksumMismatch(f"{path}: payload shorter than header declares")
        arrays[spec["name"]] = np.frombuffer(blob[off:end], dtype="<f8").reshape(shape).astype(np.float64)
        off = end
    if off != len(blob) - _DIGEST_LEN:
        raise ChecksumMismatch(f"{path}: trailing bytes after declared payload")
    return header["meta"], arrays


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
