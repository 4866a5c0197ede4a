# This file is part of DefenseLab.
# Copyright (C) 2024 DefenseLab contributors
# Licensed under the MIT license, see LICENSE.md for details.
# SPDX-License-Identifier: MIT

"""
Constants and structures defining the trace archive format.

A trace archive stores named numeric columns of one replication.  The file
is laid out as a 16-byte header, the encoded column buffers, a MsgPack index
describing the columns and run metadata, and a fixed-size trailer locating
the index.
"""

from __future__ import annotations

import enum
import io
import struct
from dataclasses import dataclass, field, fields
from typing import Any, TypeAlias

from .errors import FormatError

CodecSpec: TypeAlias = dict[str, str | bool | int | float | None]
"""
Codec configuration dictionaries, as accepted by
:func:`numcodecs.registry.get_codec`.
"""

MAGIC = b"DLTR"
VERSION = 1
HEADER_FORMAT = struct.Struct("!4sHHq")
TRAILER_FORMAT = struct.Struct("!QL32s")


def pretty_codec(codec: CodecSpec | list[CodecSpec] | None) -> str:
    "Render a codec chain for display."
    if not codec:
        return "none"
    if isinstance(codec, list):
        if len(codec) == 1:
            return pretty_codec(codec[0])
        return "[" + ", ".join(pretty_codec(c) for c in codec) + "]"
    args = ", ".join(f"{k}={v!r}" for k, v in codec.items() if k != "id")
    return f"{codec['id']}({args})"


class Flags(enum.Flag):
    """
    Header flags.
    """

    BIG_ENDIAN = 1
    "Column data was written on a big-endian host."


@dataclass
class FileHeader:
    """
    The 16-byte file header: magic ``DLTR``, version (2 bytes), flags
    (2 bytes) and total file length (8 bytes, -1 while writing).  All fields
    are big-endian.
    """

    SIZE = HEADER_FORMAT.size

    version: int = VERSION
    flags: Flags = Flags(0)
    length: int = -1

    def encode(self) -> bytes:
        return HEADER_FORMAT.pack(MAGIC, self.version, self.flags.value, self.length)

    @classmethod
    def decode(cls, buf: bytes | bytearray | memoryview) -> FileHeader:
        if len(buf) != HEADER_FORMAT.size:
            raise FormatError("incorrect header length")
        magic, version, flags, length = HEADER_FORMAT.unpack(buf)
        if magic != MAGIC:
            raise FormatError(f"invalid magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"unsupported version {version}")
        try:
            flags = Flags(flags)
        except ValueError:
            raise FormatError(f"unsupported flags {flags}")
        return cls(version, flags, length)

    @classmethod
    def read(cls, file: io.BufferedIOBase | io.RawIOBase) -> FileHeader:
        buf = file.read(HEADER_FORMAT.size)
        return cls.decode(buf or b"")

    def trailer_pos(self) -> int:
        "Position of the start of the trailer."
        if self.length < HEADER_FORMAT.size + TRAILER_FORMAT.size:
            raise FormatError(f"file length {self.length} too short for a trace archive")
        return self.length - TRAILER_FORMAT.size


@dataclass
class FileTrailer:
    """
    The trailer: index offset (8 bytes), index length (4 bytes) and the
    SHA-256 digest of the index (32 bytes).
    """

    SIZE = TRAILER_FORMAT.size

    offset: int
    length: int
    hash: bytes

    def encode(self) -> bytes:
        return TRAILER_FORMAT.pack(self.offset, self.length, self.hash)

    @classmethod
    def decode(cls, buf: bytes | bytearray | memoryview) -> FileTrailer:
        if len(buf) != TRAILER_FORMAT.size:
            raise FormatError("incorrect trailer length")
        return cls(*TRAILER_FORMAT.unpack(buf))


@dataclass
class ColumnEntry:
    """
    Index entry for one column.
    """

    name: str
    offset: int
    "Position of the encoded buffer in the file."
    enc_length: int
    dec_length: int
    hash: bytes
    "SHA-256 digest of the encoded buffer."
    dtype: str
    shape: tuple[int, ...]
    codecs: list[CodecSpec] = field(default_factory=list)

    def to_repr(self) -> dict[str, Any]:
        "MsgPack-compatible representation."
        rep = {f.name: getattr(self, f.name) for f in fields(self)}
        rep["shape"] = list(self.shape)
        return rep

    @classmethod
    def from_repr(cls, rep: Any) -> ColumnEntry:
        if not isinstance(rep, dict):
            raise FormatError("column entry must be a map")
        try:
            entry = cls(**rep)
        except TypeError as e:
            raise FormatError(f"invalid column entry: {e}")
        entry.shape = tuple(entry.shape)
        return entry
