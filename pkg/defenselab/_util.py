# This file is part of DefenseLab.
# Copyright (C) 2024 DefenseLab contributors
# Licensed under the MIT license, see LICENSE.md for details.
# SPDX-License-Identifier: MIT

"""
Internal utility functions for DefenseLab.
"""

from __future__ import annotations

import hashlib
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Generator, Optional

from typing_extensions import Buffer

naturalsize: Optional[Any]

try:
    from humanize import naturalsize
except ImportError:
    naturalsize = None


def human_size(bytes: int | float) -> str:
    if naturalsize:
        return naturalsize(bytes, binary=True, format="%.2f")
    else:
        return "{:.2f} MiB".format(bytes / (1024 * 1024))


def hash_buffer(buf: Buffer) -> bytes:
    if not isinstance(buf, memoryview):
        buf = memoryview(buf)

    return hashlib.sha256(buf).digest()


def format_float(x: float) -> str:
    "Shortest round-trip decimal representation of a float."
    return repr(float(x))


@contextmanager
def atomic_path(path: str | os.PathLike[str]) -> Generator[Path, None, None]:
    """
    Yield a temporary sibling path; on success it replaces ``path`` atomically,
    on failure it is removed.
    """
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()
