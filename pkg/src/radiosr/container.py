"""Binary voxel tensor container.

Layout (little-endian), header then raw payload:

    magic   4 bytes  b"DF3D"
    version u16      format version, currently 1
    dtype   u8       0 = uint8, 1 = float32
    dims    3 x u32  voxel counts (I, J, K)
    origin  3 x f64  region origin, meters
    res     f64      voxel side, meters

The payload is the array in row-major order (first axis outermost), exactly
``I * J * K * itemsize`` bytes.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import ContainerError
from .grids import GridSpec

MAGIC = b"DF3D"
VERSION = 1

_HEADER = struct.Struct("<4sHB3I3dd")
_DTYPES = {0: np.dtype(np.uint8), 1: np.dtype(np.float32)}
_CODES = {v: k for k, v in _DTYPES.items()}


def write_container(path: str | os.PathLike, grid: GridSpec, data: np.ndarray) -> None:
    """Write one voxel tensor to ``path``, overwriting any existing file."""
    arr = np.ascontiguousarray(data)
    if arr.dtype not in _CODES:
        raise ContainerError(
            f"unsupported dtype {arr.dtype} for container {os.fspath(path)} "
            f"(expected uint8 or float32)"
        )
    if arr.shape != grid.dims:
        raise ContainerError(
            f"data shape {arr.shape} does not match grid dims {grid.dims} "
            f"for container {os.fspath(path)}"
        )
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        _CODES[arr.dtype],
        *grid.dims,
        *grid.origin,
        grid.resolution,
    )
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes(order="C"))
    os.replace(tmp, path)


def read_container(path: str | os.PathLike) -> tuple[GridSpec, np.ndarray]:
    """Read a voxel tensor, returning its grid and array.

    Raises ContainerError naming the file on any malformed header or
    truncated payload.
    """
    name = os.fspath(path)
    try:
        with open(name, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ContainerError(f"cannot read container {name}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise ContainerError(f"container {name} truncated before header end")
    magic, version, code, di, dj, dk, ox, oy, oz, res = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ContainerError(f"container {name} has bad magic {magic!r}")
    if version != VERSION:
        raise ContainerError(f"container {name} has unsupported version {version}")
    if code not in _DTYPES:
        raise ContainerError(f"container {name} has unknown dtype code {code}")
    dtype = _DTYPES[code]
    dims = (int(di), int(dj), int(dk))
    if min(dims) < 1:
        raise ContainerError(f"container {name} has invalid dims {dims}")
    if not res > 0:
        raise ContainerError(f"container {name} has invalid resolution {res}")
    expect = dims[0] * dims[1] * dims[2] * dtype.itemsize
    payload = raw[_HEADER.size:]
    if len(payload) != expect:
        raise ContainerError(
            f"container {name} payload is {len(payload)} bytes, expected {expect}"
        )
    try:
        grid = GridSpec.create((ox, oy, oz), res, dims)
    except Exception as exc:
        raise ContainerError(f"container {name} has invalid grid: {exc}") from exc
    data = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return grid, data.copy()
