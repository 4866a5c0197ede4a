# This file is part of DefenseLab.
# Copyright (C) 2024 DefenseLab contributors
# Licensed under the MIT license, see LICENSE.md for details.
# SPDX-License-Identifier: MIT

"""
Reading trace archives.
"""

from __future__ import annotations

import hashlib
import logging
import sys
from dataclasses import dataclass
from enum import Enum
from os import PathLike
from pathlib import Path
from typing import Any

import msgpack
import numpy as np

from ._util import hash_buffer
from .encode import column_array, decode_buffer
from .errors import DefenseLabError, FormatError, IntegrityError
from .format import ColumnEntry, FileHeader, FileTrailer, Flags

_log = logging.getLogger(__name__)


class FileStatus(Enum):
    MISSING = 0
    INVALID = 1
    ARCHIVE = 2


@dataclass
class TraceInfo:
    status: FileStatus
    size: int

    @property
    def is_valid(self):
        return self.status == FileStatus.ARCHIVE


class TraceFile:
    """
    A trace archive loaded into memory.

    Args:
        filename: the archive to load.
        verify: whether to verify checksums while reading.
    """

    filename: str | PathLike[str]
    verify: bool
    header: FileHeader
    trailer: FileTrailer
    entries: list[ColumnEntry]
    metadata: dict[str, Any]
    _data: bytes

    def __init__(self, filename: str | PathLike[str], *, verify: bool = True):
        self.filename = filename
        self.verify = verify
        _log.debug("opening %s", filename)
        self._data = Path(filename).read_bytes()
        self.header = FileHeader.decode(self._data[: FileHeader.SIZE])
        if self.header.length != len(self._data):
            raise FormatError(
                f"header records {self.header.length} bytes but file has {len(self._data)}"
            )
        big = Flags.BIG_ENDIAN in self.header.flags
        if big != (sys.byteorder == "big"):
            raise FormatError("archive byte order does not match this host")
        self._read_index()

    def __enter__(self):
        return self

    def __exit__(self, *args: Any):
        return False

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def entry(self, name: str) -> ColumnEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def column(self, name: str) -> np.ndarray:
        "Load one column."
        e = self.entry(name)
        raw = self._raw(e)
        if self.verify:
            self._verify_buffer(raw, e.hash, f"column {name}")
        buf = decode_buffer(raw, e.codecs)
        if len(buf) != e.dec_length:
            raise FormatError(f"column {name} decoded to {len(buf)} bytes, not {e.dec_length}")
        return column_array(buf, e.dtype, e.shape)

    def columns(self) -> dict[str, np.ndarray]:
        return {e.name: self.column(e.name) for e in self.entries}

    def find_errors(self) -> list[str]:
        """
        Check the archive's structure and checksums, returning a list of
        problems (empty if the archive is valid).
        """
        errors: list[str] = []
        index = self._data[self.trailer.offset : self.trailer.offset + self.trailer.length]
        if hashlib.sha256(index).digest() != self.trailer.hash:
            errors.append("index hash mismatch")
        position = FileHeader.SIZE
        for i, e in enumerate(self.entries):
            if e.offset < position:
                errors.append(f"column {i}: offset {e.offset} before expected start {position}")
            position = e.offset + e.enc_length
            raw = self._raw(e)
            if hashlib.sha256(raw).digest() != e.hash:
                errors.append(f"column {i} ({e.name}): invalid digest")
                continue
            try:
                ndec = len(decode_buffer(raw, e.codecs))
            except Exception as ex:
                errors.append(f"column {i} ({e.name}): cannot decode: {ex}")
                continue
            if ndec != e.dec_length:
                errors.append(f"column {i}: decoded to {ndec} bytes, expected {e.dec_length}")
        return errors

    def _raw(self, e: ColumnEntry) -> bytes:
        end = e.offset + e.enc_length
        if e.offset < FileHeader.SIZE or end > self.trailer.offset:
            raise FormatError(f"column {e.name} lies outside the data region")
        return self._data[e.offset : end]

    def _read_index(self):
        tpos = self.header.trailer_pos()
        self.trailer = FileTrailer.decode(self._data[tpos:])
        start = self.trailer.offset
        end = start + self.trailer.length
        if start < FileHeader.SIZE or end > tpos:
            raise FormatError("index lies outside the file")
        index = self._data[start:end]
        self._verify_buffer(index, self.trailer.hash, "index")
        try:
            doc = msgpack.unpackb(index)
        except Exception as e:
            raise FormatError(f"invalid index: {e}")
        if not isinstance(doc, dict) or "columns" not in doc:
            raise FormatError("index is missing its column list")
        self.entries = [ColumnEntry.from_repr(e) for e in doc["columns"]]  # type: ignore
        self.metadata = dict(doc.get("metadata", {}))  # type: ignore
        _log.debug("read %d column entries", len(self.entries))

    def _verify_buffer(self, buf: bytes, hash: bytes, msg: str, force: bool = False):
        if self.verify or force:
            if hash_buffer(buf) != hash:
                raise IntegrityError(f"{msg} has incorrect hash, corrupt file?")


def read_traces(file: str | PathLike[str]) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """
    Load every column and the metadata of a trace archive.
    """
    with TraceFile(file) as tf:
        return tf.columns(), tf.metadata


def file_info(file: str | PathLike[str]) -> TraceInfo:
    """
    Test whether a file is a trace archive, and if so, return its length.
    """
    try:
        with open(file, "rb") as f:
            info = FileHeader.read(f)
            return TraceInfo(FileStatus.ARCHIVE, info.length)
    except FileNotFoundError:
        return TraceInfo(FileStatus.MISSING, 0)
    except DefenseLabError:
        return TraceInfo(FileStatus.INVALID, 0)
