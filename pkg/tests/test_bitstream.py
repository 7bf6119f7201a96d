import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cmamba.bitstream import (HEADER_SIZE, MAGIC, BadMagicError, BitstreamError, Header,
                              TruncatedBitstreamError, UnsupportedVersionError,
                              deserialize, serialize)

# Written out by hand from the layout table in FORMAT.md
GOLDEN_HEADER = Header(width=768, height=512, config_id=0x12345678, lambda_index=3, groups=2)
GOLDEN_SEGMENTS = (b"\x01\x02", [b"\xaa", b""])
GOLDEN_HEX = (
    "434d414d"      # magic
    "0100"          # version 1
    "00030000"      # width 768
    "00020000"      # height 512
    "78563412"      # config id
    "03"            # lambda index
    "02"            # groups
    "02000000" "0102"
    "01000000" "aa"
    "00000000"
)


def test_golden_bytes():
    assert serialize(GOLDEN_HEADER, *GOLDEN_SEGMENTS).hex() == GOLDEN_HEX
    header, z, ys = deserialize(bytes.fromhex(GOLDEN_HEX))
    assert header == GOLDEN_HEADER
    assert (z, ys) == GOLDEN_SEGMENTS


def test_header_size_and_offsets():
    data = serialize(GOLDEN_HEADER, *GOLDEN_SEGMENTS)
    assert HEADER_SIZE == 20
    assert data[0:4] == MAGIC
    assert struct.unpack_from("<I", data, 14)[0] == 0x12345678
    assert data[18] == 3 and data[19] == 2


@given(
    width=st.integers(0, 2**32 - 1),
    height=st.integers(0, 2**32 - 1),
    config_id=st.integers(0, 2**32 - 1),
    lam=st.integers(0, 255),
    segments=st.lists(st.binary(max_size=64), min_size=1, max_size=9),
)
def test_round_trip(width, height, config_id, lam, segments):
    header = Header(width, height, config_id, lam, len(segments) - 1)
    data = serialize(header, segments[0], segments[1:])
    got_header, z, ys = deserialize(data)
    assert got_header == header
    assert [z, *ys] == segments
    assert serialize(got_header, z, ys) == data


def test_bad_magic():
    data = bytearray.fromhex(GOLDEN_HEX)
    data[0] ^= 0xFF
    with pytest.raises(BadMagicError):
        deserialize(bytes(data))
    with pytest.raises(BadMagicError):
        deserialize(b"")


def test_bad_version():
    data = bytearray.fromhex(GOLDEN_HEX)
    data[4:6] = struct.pack("<H", 2)
    with pytest.raises(UnsupportedVersionError):
        deserialize(bytes(data))


@pytest.mark.parametrize("cut", [1, 2, 5, 8, 12, 18])
def test_truncation(cut):
    data = bytes.fromhex(GOLDEN_HEX)
    with pytest.raises(TruncatedBitstreamError):
        deserialize(data[:-cut])


def test_length_overrun():
    data = bytearray.fromhex(GOLDEN_HEX)
    data[20:24] = struct.pack("<I", 1000)
    with pytest.raises(TruncatedBitstreamError):
        deserialize(bytes(data))


def test_error_kinds_are_distinct():
    kinds = (BadMagicError, UnsupportedVersionError, TruncatedBitstreamError)
    for a in kinds:
        assert issubclass(a, BitstreamError)
        for b in kinds:
            assert a is b or not issubclass(a, b)


def test_trailing_bytes_rejected():
    with pytest.raises(BitstreamError):
        deserialize(bytes.fromhex(GOLDEN_HEX) + b"\x00")


def test_segment_count_must_match_header():
    with pytest.raises(BitstreamError):
        serialize(GOLDEN_HEADER, b"", [b""])
