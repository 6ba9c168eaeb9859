import io

import numpy as np
import pytest

from fastcifar import archive
from fastcifar.exceptions import FormatError


def test_roundtrip(tmp_path, rng):
    tensors = {"a": rng.normal(size=(2, 3)).astype(np.float32), "b.c": np.zeros(0, np.float32),
               "scalar": np.float32(1.5) * np.ones(())}
    archive.save(tmp_path / "t.abt", tensors)
    back = archive.load(tmp_path / "t.abt")
    assert list(back) == list(tensors)
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])
        assert back[k].dtype == np.float32


def test_layout():
    buf = io.BytesIO()
    archive.write_tensors(buf, {"w": np.array([1.0], np.float32)})
    assert buf.getvalue() == b"ABT1" + b"\x01\x00\x00\x00" + b"\x01\x00w" + b"\x01" + (1).to_bytes(8, "little") \
        + np.float32(1.0).tobytes()


def test_bad_magic():
    with pytest.raises(FormatError):
        archive.read_tensors(io.BytesIO(b"XXXX\x00\x00\x00\x00"))


def test_truncated():
    buf = io.BytesIO()
    archive.write_tensors(buf, {"w": np.ones(4, np.float32)})
    with pytest.raises(FormatError, match="truncated"):
        archive.read_tensors(io.BytesIO(buf.getvalue()[:-3]))
