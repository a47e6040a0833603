"""Little-endian framing helpers and CRC-64 shared by the on-disk formats."""
from __future__ import annotations

import struct

# CRC-64/XZ (ECMA-182 polynomial, reflected, init and xorout all ones)
_CRC64_POLY = 0xC96C5795D7870F42
_MASK64 = (1 << 64) - 1


def _make_table() -> list[int]:
    table = []
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ _CRC64_POLY if c & 1 else c >> 1
        table.append(c)
    return table


_CRC64_TABLE = _make_table()


def crc64(data: bytes, crc: int = 0) -> int:
    """CRC-64/XZ; ``crc64(b"123456789") == 0x995DC9BBDF1939FA``."""
    crc ^= _MASK64
    table = _CRC64_TABLE
    for b in data:
        crc = table[(crc ^ b) & 0xFF] ^ (crc >> 8)
    return crc ^ _MASK64


class FormatError(ValueError):
    """File is truncated, has a wrong magic/version, or malformed fields."""


class ChecksumError(FormatError):
    """Stored CRC-64 does not match the file contents."""


class ValidationError(ValueError):
    """File is well formed but its contents violate an invariant."""


class Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated file: wanted {n} bytes at offset {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        size = struct.calcsize("<" + fmt)
        return struct.unpack("<" + fmt, self.take(size))


def seal(payload: bytes) -> bytes:
    """Append the CRC-64 of everything before it."""
    return payload + struct.pack("<Q", crc64(payload))


def unseal(data: bytes) -> bytes:
    if len(data) < 8:
        raise FormatError("file too short to hold a checksum")
    payload, (stored,) = data[:-8], struct.unpack("<Q", data[-8:])
    if crc64(payload) != stored:
        raise ChecksumError("CRC-64 mismatch")
    return payload


def pack_bitset(flags) -> bytes:
    flags = list(flags)
    out = bytearray((len(flags) + 7) // 8)
    for i, f in enumerate(flags):
        if f:
            out[i >> 3] |= 1 << (i & 7)
    return bytes(out)


def unpack_bitset(raw: bytes, count: int) -> list[bool]:
    return [bool(raw[i >> 3] >> (i & 7) & 1) for i in range(count)]
