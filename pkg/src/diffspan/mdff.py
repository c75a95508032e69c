"""Flat binary tensor files ("MDFF") plus key-value manifests.

Layout of a tensor file, all integers little-endian:

    bytes 0..3    magic b"MDFF"
    bytes 4..7    version   (u32, currently 1)
    bytes 8..11   rank      (u32)
    bytes 12..15  dtype     (u32: 0 = float32, 1 = float64, 2 = int64)
    then          rank x u64 dims
    then          row-major payload

Code 0 is the interchange dtype for features; codes 1 and 2 are extensions
used for checkpoints and integer metadata.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MDFF"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {v: k for k, v in _DTYPES.items()}

# guards against corrupt headers requesting absurd allocations
MAX_DIM = 1 << 32
MAX_ELEMENTS = 1 << 40


class FormatError(Exception):
    """Base class for tensor-file format violations."""


class BadMagic(FormatError):
    pass


class VersionMismatch(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class DimOverflow(FormatError):
    pass


class UnknownDtype(FormatError):
    pass


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    arr = np.asarray(array)
    if arr.ndim:  # ascontiguousarray would promote rank-0 to rank-1
        arr = np.ascontiguousarray(arr)
    if arr.dtype not in _CODES:
        # normalize common dtypes onto the supported codes
        if np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype("<f4") if arr.dtype.itemsize <= 4 else arr.astype("<f8")
        elif np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool:
            arr = arr.astype("<i8")
        else:
            raise ValueError(f"unsupported dtype {arr.dtype}")
    code = _CODES[arr.dtype.newbyteorder("<")]
    header = MAGIC + struct.pack("<III", VERSION, arr.ndim, code)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dims)
        fh.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes(order="C"))


def read_tensor(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise TruncatedPayload(f"{path}: file shorter than header")
    if data[:4] != MAGIC:
        raise BadMagic(f"{path}: bad magic {data[:4]!r}")
    version, rank, code = struct.unpack("<III", data[4:16])
    if version != VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {VERSION}")
    if code not in _DTYPES:
        raise UnknownDtype(f"{path}: unknown dtype code {code}")
    dims_end = 16 + 8 * rank
    if len(data) < dims_end:
        raise TruncatedPayload(f"{path}: header truncated before dims")
    dims = struct.unpack(f"<{rank}Q", data[16:dims_end]) if rank else ()
    n_elem = 1
    for d in dims:
        if d > MAX_DIM:
            raise DimOverflow(f"{path}: dim {d} exceeds limit")
        n_elem *= d
        if n_elem > MAX_ELEMENTS:
            raise DimOverflow(f"{path}: element count overflows limit")
    dtype = _DTYPES[code]
    expected = dims_end + n_elem * dtype.itemsize
    if len(data) < expected:
        raise TruncatedPayload(f"{path}: payload {len(data) - dims_end} bytes, expected {n_elem * dtype.itemsize}")
    if len(data) > expected:
        raise FormatError(f"{path}: {len(data) - expected} trailing bytes")
    return np.frombuffer(data[dims_end:expected], dtype=dtype).reshape(dims).copy()


def write_manifest(path: str | Path, entries: dict[str, str]) -> None:
    lines = [f"{key} = {value}\n" for key, value in entries.items()]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_manifest(path: str | Path) -> dict[str, str]:
    entries: dict[str, str] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}: malformed manifest line {raw!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries
