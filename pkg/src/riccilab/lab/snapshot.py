"""Binary metric snapshots.

Layout: one UTF-8 JSON header line terminated by ``\\n``, then the payload of
little-endian float64 values. Nodes are in row-major order (last grid axis
fastest) and the stored components of each node follow in upper-triangle
order, ``g11, g12, ..., g22, ...``. The header carries the CRC-32 of the
payload bytes.
"""

from __future__ import annotations

import json
import os
import tempfile
import zlib
from pathlib import Path

import numpy as np

from ..errors import ChecksumMismatch, FormatError, GridMismatch
from ..fields import MetricField, TorusGrid
from ..flows import FlowState

FORMAT_NAME = "riccilab-metric-snapshot"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write through a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_snapshot(state: FlowState) -> bytes:
    g = state.g
    grid = g.grid
    payload = np.ascontiguousarray(np.moveaxis(g.comps, 0, -1), dtype=_DTYPE).tobytes()
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "dim": grid.dim,
        "resolution": list(grid.resolution),
        "periods": list(grid.periods),
        "time": state.t,
        "components": grid.n_sym,
        "payload_bytes": len(payload),
        "crc32": zlib.crc32(payload),
    }
    return json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + payload


def snapshot_write(state: FlowState, path: str | Path) -> None:
    atomic_write_bytes(path, encode_snapshot(state))


def decode_snapshot(blob: bytes, expect_grid: TorusGrid | None = None) -> FlowState:
    end = blob.find(b"\n")
    if end < 0:
        raise FormatError("missing header terminator", offset=len(blob))
    try:
        header = json.loads(blob[:end].decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise FormatError("header is not UTF-8", offset=exc.start) from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"header is not valid JSON: {exc.msg}", offset=exc.pos) from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise FormatError("not a metric snapshot", offset=0)
    if header.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported snapshot version {header.get('version')!r}", offset=0)
    try:
        grid = TorusGrid(tuple(header["resolution"]), tuple(header["periods"]))
        t = float(header["time"])
        ncomp = int(header["components"])
        crc = int(header["crc32"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad header field: {exc}", offset=0) from None
    if header.get("dim") != grid.dim or ncomp != grid.n_sym:
        raise FormatError("header dimension and component count disagree", offset=0)

    start = end + 1
    expected = grid.node_count * ncomp * _DTYPE.itemsize
    payload = blob[start:]
    if len(payload) != expected:
        raise FormatError(
            f"payload has {len(payload)} bytes, expected {expected}",
            offset=start + min(len(payload), expected),
        )
    if zlib.crc32(payload) != crc:
        raise ChecksumMismatch(f"payload CRC-32 {zlib.crc32(payload):#010x} != header {crc:#010x}")
    if expect_grid is not None and expect_grid != grid:
        raise GridMismatch(f"snapshot grid {grid.resolution} does not match run grid {expect_grid.resolution}")
    values = np.frombuffer(payload, dtype=_DTYPE).reshape(*grid.shape, ncomp)
    comps = np.moveaxis(values, -1, 0).astype(float)
    return FlowState(t, MetricField(grid, comps))


def snapshot_read(path: str | Path, expect_grid: TorusGrid | None = None) -> FlowState:
    return decode_snapshot(Path(path).read_bytes(), expect_grid)


def snapshot_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        line = fh.readline()
    try:
        return json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}", offset=0) from None
