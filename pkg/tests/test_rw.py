# This file is part of DefenseLab.
# Copyright (C) 2024 DefenseLab contributors
# Licensed under the MIT license, see LICENSE.md for details.
# SPDX-License-Identifier: MIT

from pathlib import Path
from tempfile import TemporaryDirectory

import numcodecs as nc
import numpy as np

import hypothesis.strategies as st
import pytest
from hypothesis import given, settings
from hypothesis.extra.numpy import arrays, scalar_dtypes

from defenselab.errors import FormatError
from defenselab.read import TraceFile, read_traces
from defenselab.write import TraceWriter, write_traces


def test_empty(tmp_path):
    "Write an archive with no columns"
    file = tmp_path / "rep.dltr"

    with TraceWriter(file):
        pass

    assert file.stat().st_size == 80

    with TraceFile(file) as tf:
        assert len(tf.entries) == 0
        assert tf.metadata == {}
        assert tf.find_errors() == []


def test_write_columns(tmp_path, rng: np.random.Generator):
    file = tmp_path / "rep.dltr"
    states = rng.integers(0, 13, 1000)
    values = rng.normal(0, 1, (500, 2))

    write_traces(file, {"state": states, "value": values}, metadata={"seed": 42, "tag": "demo"})

    with TraceFile(file) as tf:
        assert tf.names == ["state", "value"]
        assert tf.metadata == {"seed": 42, "tag": "demo"}
        e = tf.entry("value")
        assert e.shape == (500, 2)
        assert e.dec_length == values.nbytes
        assert np.array_equal(tf.column("state"), states)
        assert np.array_equal(tf.column("value"), values)
        with pytest.raises(KeyError):
            tf.entry("missing")


def test_read_traces(tmp_path):
    file = tmp_path / "rep.dltr"
    write_traces(file, {"x": np.arange(10.0), "empty": np.zeros(0)}, metadata={"r": 3})
    cols, meta = read_traces(file)
    assert list(cols) == ["x", "empty"]
    assert np.array_equal(cols["x"], np.arange(10.0))
    assert cols["empty"].shape == (0,)
    assert meta == {"r": 3}


def test_no_codecs(tmp_path, rng: np.random.Generator):
    file = tmp_path / "rep.dltr"
    a = rng.integers(0, 5000, 1024, dtype="i4")
    write_traces(file, {"a": a}, codecs=[])
    with TraceFile(file) as tf:
        e = tf.entry("a")
        assert e.codecs == []
        assert e.enc_length == a.nbytes
        assert np.array_equal(tf.column("a"), a)


def test_codec_instances(tmp_path, rng: np.random.Generator):
    file = tmp_path / "rep.dltr"
    a = rng.normal(size=2048)
    write_traces(file, {"a": a}, codecs=[nc.GZip(), "zlib"])
    with TraceFile(file) as tf:
        assert [c["id"] for c in tf.entry("a").codecs] == ["gzip", "zlib"]
        assert np.array_equal(tf.column("a"), a)


def test_deterministic_bytes(tmp_path, rng: np.random.Generator):
    a = rng.normal(size=300)
    write_traces(tmp_path / "a.dltr", {"a": a}, metadata={"seed": 1})
    write_traces(tmp_path / "b.dltr", {"a": a}, metadata={"seed": 1})
    assert (tmp_path / "a.dltr").read_bytes() == (tmp_path / "b.dltr").read_bytes()


def test_error_discards(tmp_path):
    file = tmp_path / "rep.dltr"
    with pytest.raises(RuntimeError):
        with TraceWriter(file) as tw:
            tw.add("a", np.arange(5))
            raise RuntimeError("interrupted")
    assert not file.exists()
    assert list(tmp_path.iterdir()) == []


def test_writer_rejects(tmp_path):
    tw = TraceWriter(tmp_path / "rep.dltr")
    tw.add("a", np.arange(5))
    with pytest.raises(FormatError, match="duplicate"):
        tw.add("a", np.arange(3))
    with pytest.raises(FormatError, match="object dtype"):
        tw.add("b", np.array([None, 1], dtype=object))
    tw.finish()
    with pytest.raises(FormatError, match="finished"):
        tw.add("c", np.arange(2))


@settings(deadline=None)
@given(arrays(scalar_dtypes(), st.integers(0, 5000)))
def test_many_arrays(a):
    with TemporaryDirectory("dltr") as path:
        file = Path(path) / "rep.dltr"
        write_traces(file, {"a": a})
        with TraceFile(file) as tf:
            assert tf.find_errors() == []
            a2 = tf.column("a")
            assert a2.dtype == a.dtype
            assert a2.shape == a.shape
            assert a2.tobytes() == a.tobytes()
