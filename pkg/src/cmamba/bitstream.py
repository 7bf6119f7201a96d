"""Bitstream container.

Layout (all integers little-endian)::

    offset  size  field
    0       4     magic  b"CMAM"
    4       2     version (uint16, currently 1)
    6       4     image width  (uint32, before padding)
    10      4     image height (uint32, before padding)
    14      4     config id (uint32, CRC32 of the architecture config)
    18      1     lambda index (uint8, 255 = custom)
    19      1     group count S (uint8)
    20      4     z segment length n_z (uint32)
    24      n_z   z segment bytes
    ...           S times: uint32 length, then that many bytes
"""
import struct
from dataclasses import dataclass
from typing import List, Sequence, Tuple

__all__ = [
    "MAGIC",
    "VERSION",
    "HEADER_SIZE",
    "Header",
    "BitstreamError",
    "BadMagicError",
    "UnsupportedVersionError",
    "TruncatedBitstreamError",
    "serialize",
    "deserialize",
]

MAGIC = b"CMAM"
VERSION = 1
_HEADER = struct.Struct("<4sHIIIBB")
_LEN = struct.Struct("<I")
HEADER_SIZE = _HEADER.size


class BitstreamError(ValueError):
    """Malformed container."""


class BadMagicError(BitstreamError):
    pass


class UnsupportedVersionError(BitstreamError):
    pass


class TruncatedBitstreamError(BitstreamError):
    """A declared length runs past the end of the data."""


@dataclass(frozen=True)
class Header:
    width: int
    height: int
    config_id: int
    lambda_index: int
    groups: int
    version: int = VERSION


def serialize(header: Header, z_segment: bytes, y_segments: Sequence[bytes]) -> bytes:
    if len(y_segments) != header.groups:
        raise BitstreamError(f"header declares {header.groups} groups, got {len(y_segments)} segments")
    parts = [_HEADER.pack(MAGIC, header.version, header.width, header.height,
                          header.config_id, header.lambda_index, header.groups)]
    for seg in (z_segment, *y_segments):
        parts.append(_LEN.pack(len(seg)))
        parts.append(bytes(seg))
    return b"".join(parts)


def deserialize(data: bytes) -> Tuple[Header, bytes, List[bytes]]:
    """Parse a container into ``(header, z_segment, y_segments)``."""
    data = bytes(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("not a CMAM bitstream")
    if len(data) < HEADER_SIZE:
        raise TruncatedBitstreamError("header truncated")
    _, version, width, height, config_id, lam, groups = _HEADER.unpack_from(data)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported bitstream version {version}")
    pos = HEADER_SIZE
    segments = []
    for _ in range(groups + 1):
        if pos + _LEN.size > len(data):
            raise TruncatedBitstreamError("segment length field truncated")
        (n,) = _LEN.unpack_from(data, pos)
        pos += _LEN.size
        if pos + n > len(data):
            raise TruncatedBitstreamError(f"segment of {n} bytes overruns the stream")
        segments.append(data[pos:pos + n])
        pos += n
    if pos != len(data):
        raise BitstreamError(f"{len(data) - pos} trailing bytes after the last segment")
    header = Header(width, height, config_id, lam, groups, version)
    return header, segments[0], segments[1:]
