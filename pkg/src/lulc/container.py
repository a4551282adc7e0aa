"""Manifest-plus-blobs container used for checkpoints and SVM models.

Layout (all integers in ASCII, one per line)::

    LULC-CONTAINER\\n
    version <format version>\\n
    manifest <byte length of the JSON manifest>\\n
    <UTF-8 JSON manifest>
    <raw little-endian tensor bytes, concatenated>

The manifest holds ``kind``, free-form ``meta``, and a ``tensors`` list of
``{name, dtype, shape, offset, nbytes}``; offsets count from the first byte
after the manifest.
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"LULC-CONTAINER\n"
FORMAT_VERSION = 1
_DTYPES = {"<f4": np.float32, "<f8": np.float64}


class ContainerError(Exception):
    pass


class FormatVersionError(ContainerError):
    pass


class TruncatedBlobError(ContainerError):
    pass


class ManifestError(ContainerError):
    """The manifest disagrees with itself or with a tensor's byte count."""


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode(kind: str, meta: dict, tensors: dict[str, np.ndarray]) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = np.dtype(arr.dtype).newbyteorder("<").str
        if code not in _DTYPES:
            raise ContainerError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr, dtype=code).tobytes()
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps({"format_version": FORMAT_VERSION, "kind": kind, "meta": meta,
                           "tensors": entries}, indent=1, sort_keys=True).encode("utf-8")
    header = MAGIC + f"version {FORMAT_VERSION}\n".encode() + f"manifest {len(manifest)}\n".encode()
    return header + manifest + b"".join(chunks)


def decode(data: bytes, expect_kind: str | None = None):
    """Parse container bytes into ``(kind, meta, tensors)``."""
    if not data.startswith(MAGIC):
        raise ContainerError("not a LULC container (bad magic line)")
    pos = len(MAGIC)
    lines = []
    for _ in range(2):
        end = data.find(b"\n", pos)
        if end < 0:
            raise TruncatedBlobError("container header is truncated")
        lines.append(data[pos:end].decode("ascii", "replace"))
        pos = end + 1
    key, _, value = lines[0].partition(" ")
    if key != "version" or not value.isdigit():
        raise ContainerError(f"malformed version line {lines[0]!r}")
    if int(value) != FORMAT_VERSION:
        raise FormatVersionError(f"container format version {value}, this reader supports {FORMAT_VERSION}")
    key, _, value = lines[1].partition(" ")
    if key != "manifest" or not value.isdigit():
        raise ContainerError(f"malformed manifest line {lines[1]!r}")
    mlen = int(value)
    if pos + mlen > len(data):
        raise TruncatedBlobError("manifest is truncated")
    manifest = json.loads(data[pos:pos + mlen].decode("utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatVersionError(
            f"manifest format version {manifest.get('format_version')}, expected {FORMAT_VERSION}")
    kind = manifest.get("kind")
    if expect_kind is not None and kind != expect_kind:
        raise ContainerError(f"container holds a {kind!r}, expected {expect_kind!r}")
    body = memoryview(data)[pos + mlen:]
    tensors = {}
    for entry in manifest["tensors"]:
        name = entry["name"]
        if entry["dtype"] not in _DTYPES:
            raise ManifestError(f"tensor {name!r}: unsupported dtype {entry['dtype']}")
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        want = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if entry["nbytes"] != want:
            raise ManifestError(
                f"tensor {name!r}: manifest says {entry['nbytes']} bytes but shape {list(shape)} "
                f"of {entry['dtype']} needs {want}")
        start, stop = entry["offset"], entry["offset"] + entry["nbytes"]
        if stop > len(body):
            raise TruncatedBlobError(
                f"tensor {name!r}: blob ends at byte {stop} but only {len(body)} bytes follow the manifest")
        arr = np.frombuffer(body[start:stop], dtype=dtype).reshape(shape)
        tensors[name] = arr.astype(_DTYPES[entry["dtype"]])
    return kind, manifest["meta"], tensors


def write_container(path, kind: str, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    atomic_write_bytes(path, encode(kind, meta, tensors))


def read_container(path, expect_kind: str | None = None):
    return decode(Path(path).read_bytes(), expect_kind)
