import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mtpose.spkt import (
    FormatError,
    decode_checkpoint,
    encode_checkpoint,
    encode_tensor,
    load_checkpoint,
    load_tensor,
    save_checkpoint,
    save_tensor,
)


def test_tensor_layout():
    buf = encode_tensor(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
    assert buf[:4] == b"SPKT"
    assert struct.unpack("<IIII", buf[4:20]) == (1, 2, 2, 3)
    assert np.frombuffer(buf[20:], "<f8").tolist() == [1, 2, 3, 4, 5, 6]


@given(a=hnp.arrays(np.float64, hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=4), elements=st.floats(allow_nan=True)))
def test_tensor_round_trip(a, tmp_path_factory):
    path = tmp_path_factory.mktemp("t") / "x.spkt"
    save_tensor(path, a)
    back = load_tensor(path)
    assert back.shape == a.shape
    assert np.array_equal(back, a, equal_nan=True)
    assert encode_tensor(back) == encode_tensor(a)


def test_checkpoint_round_trip_is_byte_identical(rng, tmp_path):
    tensors = {"w": rng.standard_normal((3, 3, 2, 4)), "b": np.zeros(4), "s": np.array(2.5)}
    meta = {"kind": "pose", "note": "a=b"}
    save_checkpoint(tmp_path / "a.spkc", tensors, meta)
    t2, m2 = load_checkpoint(tmp_path / "a.spkc")
    assert list(t2) == ["w", "b", "s"] and m2 == meta
    save_checkpoint(tmp_path / "b.spkc", t2, m2)
    assert (tmp_path / "a.spkc").read_bytes() == (tmp_path / "b.spkc").read_bytes()


def test_empty_checkpoint():
    assert decode_checkpoint(encode_checkpoint({})) == ({}, {})


@pytest.mark.parametrize("cut", [2, 6, 14, 30, -3])
def test_truncated_checkpoint_raises(cut, rng):
    buf = encode_checkpoint({"w": rng.standard_normal(3)}, {"k": "v"})
    with pytest.raises(FormatError):
        decode_checkpoint(buf[:cut])


def test_bad_magic_version_and_meta():
    buf = encode_checkpoint({"w": np.ones(2)})
    with pytest.raises(FormatError, match="SPKC"):
        decode_checkpoint(b"XXXX" + buf[4:])
    with pytest.raises(FormatError, match="version"):
        decode_checkpoint(buf[:4] + struct.pack("<I", 9) + buf[8:])
    with pytest.raises(FormatError):
        encode_checkpoint({}, {"a=b": "c"})
    with pytest.raises(FormatError):
        encode_checkpoint({}, {"a": "line\nbreak"})
