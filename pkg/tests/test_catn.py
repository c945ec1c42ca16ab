import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from coupalign.utils.catn import decode_catn, encode_catn, read_catn, write_catn
from coupalign.utils.errors import FormatError, UnsupportedVersionError


def test_bit_exact_round_trip(tmp_path):
    tensors = {
        "weights": np.random.default_rng(0).normal(size=(3, 4)).astype(np.float32),
        "scalar": np.array(2.5),
        "empty": np.zeros((0, 3)),
        "名字": np.array([np.nan, -0.0, np.inf]),
    }
    write_catn(tmp_path / "x.catn", tensors)
    loaded = read_catn(tmp_path / "x.catn")
    assert list(loaded) == list(tensors)
    for name, value in tensors.items():
        assert loaded[name].dtype == value.dtype
        assert loaded[name].shape == value.shape
        assert loaded[name].tobytes() == value.tobytes()


@given(arrays(st.sampled_from([np.float32, np.float64]), array_shapes(min_dims=0, max_dims=3, max_side=4)))
def test_round_trip_arbitrary_arrays(value):
    loaded = decode_catn(encode_catn({"t": value}))["t"]
    assert loaded.shape == value.shape
    assert loaded.tobytes() == value.tobytes()


def test_header_layout():
    payload = encode_catn({"a": np.zeros(2, dtype=np.float64)})
    assert payload[:4] == b"CATN"
    assert struct.unpack("<II", payload[4:12]) == (1, 1)


def test_bad_magic():
    payload = b"XATN" + encode_catn({})[4:]
    with pytest.raises(FormatError) as info:
        decode_catn(payload)
    assert info.value.offset == 0


def test_unsupported_version():
    payload = bytearray(encode_catn({"a": np.ones(1)}))
    payload[4:8] = struct.pack("<I", 2)
    with pytest.raises(UnsupportedVersionError):
        decode_catn(bytes(payload))


def test_truncated_payload_reports_offset():
    payload = encode_catn({"a": np.ones(4)})
    with pytest.raises(FormatError) as info:
        decode_catn(payload[:-3])
    assert info.value.offset is not None


def test_trailing_bytes():
    with pytest.raises(FormatError):
        decode_catn(encode_catn({"a": np.ones(1)}) + b"\x00")


def test_unknown_dtype_tag():
    payload = bytearray(encode_catn({"a": np.ones(1, dtype=np.float32)}))
    # 12 字节头 + 4 字节名字长度 + 1 字节名字 + 1 字节阶数 + 4 字节维度
    payload[22] = 7
    with pytest.raises(FormatError):
        decode_catn(bytes(payload))


def test_missing_file(tmp_path):
    with pytest.raises(FormatError):
        read_catn(tmp_path / "nope.catn")
