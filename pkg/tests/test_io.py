from __future__ import annotations

import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from waveprobe.errors import GridFormatError
from waveprobe.io import MAGIC, format_value, grid_meta, read_csv, read_grid, sha256_file, write_csv, write_grid


@given(arr=arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5), st.integers(1, 3)),
                  elements=st.floats(allow_nan=False, allow_infinity=False)))
@settings(max_examples=25, deadline=None)
def test_grid_round_trip(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("g") / "f.wpg"
    write_grid(path, arr, {"tag": "x", "dx": 0.5})
    back, meta = read_grid(path)
    assert np.array_equal(back, arr)
    assert meta == {"tag": "x", "dx": 0.5}


def test_layout(tmp_path):
    path = tmp_path / "a.wpg"
    write_grid(path, np.arange(6.0).reshape(2, 3))
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    assert struct.unpack_from("<I2Q", raw, 4) == (2, 2, 3)
    assert len(raw) == 4 + 4 + 16 + 48 + len(b"{}")
    assert read_grid(path)[1] == {}


@pytest.mark.parametrize(
    "mutate, code",
    [
        (lambda r: b"XXXX" + r[4:], "bad-magic"),
        (lambda r: r[:6], "truncation"),
        (lambda r: r[:14], "truncation"),
        (lambda r: r[:40], "truncation"),
        (lambda r: r[:4] + struct.pack("<I3Q", 3, 2**20, 2**20, 2**20), "dimension-overflow"),
        (lambda r: r + b"\xff", "bad-trailer"),
    ],
)
def test_corrupt_files(tmp_path, mutate, code):
    path = tmp_path / "a.wpg"
    write_grid(path, np.ones((2, 3)), {"k": 1})
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(GridFormatError) as exc:
        read_grid(path)
    assert exc.value.code == code


def test_grid_meta(small_grid):
    m = grid_meta(small_grid, tag="u")
    assert m["dt"] == small_grid.dt and m["tag"] == "u" and m["bbox"] == [-1.0, 1.0, -1.0, 1.0]


@given(v=st.floats(allow_nan=False, allow_infinity=False))
def test_float_text_round_trips(v):
    assert float(format_value(v)) == v


def test_format_value_kinds():
    assert format_value(np.int64(3)) == "3"
    assert format_value(True) == "True"
    assert format_value(np.float32(0.5)) == "0.5"
    assert format_value("abc") == "abc"
    assert format_value(math.inf) == "inf"


def test_csv_round_trip_and_digest(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(p, ("a", "b"), [(1, 0.1), (2, 1 / 3)])
    head, rows = read_csv(p)
    assert head == ["a", "b"] and float(rows[1][1]) == 1 / 3
    q = tmp_path / "u.csv"
    write_csv(q, ("a", "b"), [(1, 0.1), (2, 1 / 3)])
    assert sha256_file(p) == sha256_file(q)
    (tmp_path / "e.csv").write_text("")
    with pytest.raises(GridFormatError):
        read_csv(tmp_path / "e.csv")
