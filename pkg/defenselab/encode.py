# This file is part of DefenseLab.
# Copyright (C) 2024 DefenseLab contributors
# Licensed under the MIT license, see LICENSE.md for details.
# SPDX-License-Identifier: MIT

"""
Column encoding and decoding with numcodecs.
"""

from __future__ import annotations

from typing import Sequence, TypeAlias

import numpy as np
from numcodecs.abc import Codec
from numcodecs.registry import get_codec
from typing_extensions import Buffer

from .format import CodecSpec

CodecArg: TypeAlias = Codec | str | CodecSpec

DEFAULT_CODECS: list[CodecArg] = [{"id": "zlib", "level": 6}]
"Default column codecs; zlib output is deterministic for identical input."


def resolve_codec(codec: CodecArg) -> Codec:
    """
    Resolve a codec argument (instance, configuration dictionary, or codec
    ID) into a codec instance.
    """
    if isinstance(codec, str):
        return get_codec({"id": codec})
    elif isinstance(codec, dict):
        return get_codec(dict(codec))
    elif isinstance(codec, Codec):
        return codec
    else:
        raise TypeError(f"invalid codec argument {type(codec)}")


def encode_buffer(buf: Buffer, codecs: Sequence[Codec]) -> tuple[bytes, list[CodecSpec]]:
    "Encode a buffer with a codec chain, returning the data and the chain's configs."
    if memoryview(buf).nbytes == 0:
        return b"", []
    out: Buffer = buf
    for codec in codecs:
        out = codec.encode(out)
    return bytes(memoryview(out)), [c.get_config() for c in codecs]


def decode_buffer(buf: Buffer, codecs: Sequence[CodecSpec]) -> bytes:
    "Decode a buffer by applying a codec chain in reverse."
    out: Buffer = buf
    for spec in reversed(codecs):
        out = resolve_codec(spec).decode(out)
    return bytes(memoryview(out))


def column_array(buf: Buffer, dtype: str, shape: Sequence[int]) -> np.ndarray:
    "Interpret decoded bytes as an array."
    arr = np.frombuffer(buf, dtype=np.dtype(dtype))
    return arr.reshape(tuple(shape)).copy()
