"""Binary grid files and deterministic CSV.

Grid files (``.wpg``) are laid out as::

    b"WPG1" | u32 rank | u64 dims[rank] | f64 payload (row-major) | UTF-8 JSON trailer

all little-endian.  The payload of a space-time field has ``t`` as the slowest
axis.  The trailer is free-form metadata (spacings, bounding box, conjugation
tag, ...); an empty trailer reads back as ``{}``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import GridFormatError

MAGIC = b"WPG1"
#: Largest element count accepted from a header (guards against corrupt dims).
MAX_ELEMENTS = 2**40


def write_grid(path, data: np.ndarray, meta: Mapping[str, Any] | None = None) -> None:
    arr = np.ascontiguousarray(data, dtype="<f8")
    head = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    trailer = json.dumps(dict(meta or {}), sort_keys=True, default=_jsonable).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(arr.tobytes(order="C"))
        fh.write(trailer)


def read_grid(path) -> tuple[np.ndarray, dict[str, Any]]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise GridFormatError(f"{path}: missing WPG1 magic", "bad-magic")
    if len(raw) < 8:
        raise GridFormatError(f"{path}: header ends before the rank", "truncation")
    (rank,) = struct.unpack_from("<I", raw, 4)
    off = 8 + 8 * rank
    if len(raw) < off:
        raise GridFormatError(f"{path}: header ends inside the dimension list", "truncation")
    dims = struct.unpack_from(f"<{rank}Q", raw, 8)
    count = math.prod(dims)
    if count > MAX_ELEMENTS:
        raise GridFormatError(f"{path}: {count} elements exceed the format limit", "dimension-overflow")
    end = off + 8 * count
    if len(raw) < end:
        raise GridFormatError(
            f"{path}: payload holds {(len(raw) - off) // 8} values, header promises {count}", "truncation"
        )
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(dims).copy()
    tail = raw[end:]
    try:
        meta = json.loads(tail.decode("utf-8")) if tail else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise GridFormatError(f"{path}: unreadable metadata trailer ({exc})", "bad-trailer") from exc
    return data, meta


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"{type(obj).__name__} is not JSON serialisable")


def grid_meta(grid, **extra) -> dict[str, Any]:
    """Standard trailer for a field on ``grid``."""
    meta = {
        "dx": grid.dx,
        "dy": grid.dy,
        "dt": grid.dt,
        "T": grid.T,
        "bbox": list(grid.domain.bbox),
        "shape": grid.domain.shape,
    }
    meta.update(extra)
    return meta


# ---------------------------------------------------------------------------
# CSV


def format_value(v) -> str:
    """Shortest round-trip text for floats (at most 17 significant digits)."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise GridFormatError(f"{path}: empty CSV", "truncation")
    return rows[0], rows[1:]


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
