# This file is part of DefenseLab.
# Copyright (C) 2024 DefenseLab contributors
# Licensed under the MIT license, see LICENSE.md for details.
# SPDX-License-Identifier: MIT

"""
Writing trace archives.
"""

from __future__ import annotations

import hashlib
import io
import logging
import sys
from os import PathLike
from typing import Any, Mapping, Optional

import msgpack
import numpy as np
from numpy.typing import ArrayLike
from typing_extensions import Self

from ._util import atomic_path, human_size
from .encode import DEFAULT_CODECS, CodecArg, encode_buffer, resolve_codec
from .errors import FormatError
from .format import ColumnEntry, FileHeader, FileTrailer, Flags

_log = logging.getLogger(__name__)


class TraceWriter:
    """
    Write named columns into a trace archive.  The archive is assembled in memory
    and :meth:`finish` moves it into place through a temporary sibling file,
    so readers never observe a partial archive.

    A TraceWriter is a context manager that finishes the file on a clean
    exit and discards it on error::

        with TraceWriter('rep-0000.dltr', metadata={'seed': 42}) as tw:
            tw.add('policy', policies)

    Args:
        filename: the path to write.
        metadata: MsgPack-serializable run metadata stored in the index.
        codecs: the codec chain applied to every column.
    """

    filename: str | PathLike[str]
    metadata: dict[str, Any]
    entries: list[ColumnEntry]
    _buffer: io.BytesIO
    _codecs: list[Any]
    _done: bool

    def __init__(
        self,
        filename: str | PathLike[str],
        *,
        metadata: Optional[Mapping[str, Any]] = None,
        codecs: Optional[list[CodecArg]] = None,
    ):
        self.filename = filename
        self.metadata = dict(metadata or {})
        self.entries = []
        self._codecs = [resolve_codec(c) for c in (DEFAULT_CODECS if codecs is None else codecs)]
        self._buffer = io.BytesIO()
        self._done = False
        header = FileHeader()
        if sys.byteorder == "big":
            header.flags |= Flags.BIG_ENDIAN
        self._buffer.write(header.encode())

    def __enter__(self) -> Self:
        return self

    def __exit__(self, exc_type: Any, *args: Any):
        if exc_type is None and not self._done:
            self.finish()
        return False

    def add(self, name: str, data: ArrayLike):
        "Add a column."
        if self._done:
            raise FormatError("archive already finished")
        if any(e.name == name for e in self.entries):
            raise FormatError(f"duplicate column {name!r}")
        arr = np.ascontiguousarray(data)
        if arr.dtype.hasobject:
            raise FormatError(f"column {name!r} has object dtype")
        enc, specs = encode_buffer(arr.tobytes(), self._codecs)
        offset = self._buffer.tell()
        self._buffer.write(enc)
        entry = ColumnEntry(
            name,
            offset,
            len(enc),
            arr.nbytes,
            hashlib.sha256(enc).digest(),
            arr.dtype.str,
            tuple(arr.shape),
            specs,
        )
        _log.debug("column %s: %d bytes encoded to %d", name, arr.nbytes, len(enc))
        self.entries.append(entry)

    def finish(self):
        "Write the index and trailer and move the archive into place."
        index = msgpack.packb(
            {"columns": [e.to_repr() for e in self.entries], "metadata": self.metadata}
        )
        assert index is not None
        pos = self._buffer.tell()
        self._buffer.write(index)
        self._buffer.write(FileTrailer(pos, len(index), hashlib.sha256(index).digest()).encode())
        length = self._buffer.tell()

        data = self._buffer.getbuffer()
        header = FileHeader.decode(data[: FileHeader.SIZE])
        header.length = length
        data[: FileHeader.SIZE] = header.encode()

        with atomic_path(self.filename) as tmp:
            tmp.write_bytes(data)
        del data
        self._done = True
        _log.debug(
            "wrote %d columns to %s (%s)", len(self.entries), self.filename, human_size(length)
        )


def write_traces(
    file: str | PathLike[str],
    columns: Mapping[str, ArrayLike],
    *,
    metadata: Optional[Mapping[str, Any]] = None,
    codecs: Optional[list[CodecArg]] = None,
):
    """
    Write a set of columns to a trace archive.

    Args:
        file: the path to write.
        columns: the columns, in the order they should be stored.
        metadata: run metadata.
        codecs: codec chain (default zlib).
    """
    with TraceWriter(file, metadata=metadata, codecs=codecs) as tw:
        for name, data in columns.items():
            tw.add(name, data)
