import struct

import numpy as np
import pytest

from radiosr import ContainerError, GridSpec, read_container, write_container


@pytest.fixture
def grid():
    return GridSpec.create((1.0, -2.0, 0.5), 2.0, (3, 4, 5))


def test_roundtrip_uint8(tmp_path, grid, rng):
    data = rng.integers(0, 2, size=(3, 4, 5)).astype(np.uint8)
    path = tmp_path / "env.df3d"
    write_container(path, grid, data)
    g2, d2 = read_container(path)
    assert g2 == grid
    assert d2.dtype == np.uint8
    assert d2.tobytes() == data.tobytes()


def test_roundtrip_float32(tmp_path, grid, rng):
    data = rng.normal(size=(3, 4, 5)).astype(np.float32)
    path = tmp_path / "map.df3d"
    write_container(path, grid, data)
    g2, d2 = read_container(path)
    assert g2 == grid
    assert d2.dtype == np.float32
    assert d2.tobytes() == data.tobytes()


def test_header_layout_bytes(tmp_path, grid):
    # Independently unpack the on-disk header against the documented layout.
    data = np.arange(60, dtype=np.float32).reshape(3, 4, 5)
    path = tmp_path / "t.df3d"
    write_container(path, grid, data)
    raw = path.read_bytes()
    magic, version, code, di, dj, dk, ox, oy, oz, res = struct.unpack_from(
        "<4sHB3I3dd", raw
    )
    assert magic == b"DF3D"
    assert version == 1
    assert code == 1  # float32
    assert (di, dj, dk) == (3, 4, 5)
    assert (ox, oy, oz) == (1.0, -2.0, 0.5)
    assert res == 2.0
    header_size = struct.calcsize("<4sHB3I3dd")
    assert raw[header_size:] == data.tobytes(order="C")
    assert len(raw) == header_size + 60 * 4


def test_bad_magic_names_file(tmp_path, grid):
    path = tmp_path / "bad.df3d"
    write_container(path, grid, np.zeros((3, 4, 5), dtype=np.uint8))
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(ContainerError, match="bad.df3d"):
        read_container(path)


def test_truncated_payload(tmp_path, grid):
    path = tmp_path / "short.df3d"
    write_container(path, grid, np.zeros((3, 4, 5), dtype=np.float32))
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ContainerError, match="short.df3d"):
        read_container(path)


def test_unknown_dtype_code(tmp_path, grid):
    path = tmp_path / "dtype.df3d"
    write_container(path, grid, np.zeros((3, 4, 5), dtype=np.uint8))
    raw = bytearray(path.read_bytes())
    raw[6] = 9  # dtype code byte
    path.write_bytes(bytes(raw))
    with pytest.raises(ContainerError, match="dtype.df3d"):
        read_container(path)


def test_unsupported_version(tmp_path, grid):
    path = tmp_path / "ver.df3d"
    write_container(path, grid, np.zeros((3, 4, 5), dtype=np.uint8))
    raw = bytearray(path.read_bytes())
    struct.pack_into("<H", raw, 4, 7)
    path.write_bytes(bytes(raw))
    with pytest.raises(ContainerError, match="ver.df3d"):
        read_container(path)


def test_missing_file(tmp_path):
    with pytest.raises(ContainerError, match="nope.df3d"):
        read_container(tmp_path / "nope.df3d")


def test_write_rejects_wrong_dtype(tmp_path, grid):
    with pytest.raises(ContainerError):
        write_container(tmp_path / "f64.df3d", grid, np.zeros((3, 4, 5), dtype=np.float64))


def test_write_rejects_shape_mismatch(tmp_path, grid):
    with pytest.raises(ContainerError):
        write_container(tmp_path / "shape.df3d", grid, np.zeros((3, 4, 4), dtype=np.uint8))
