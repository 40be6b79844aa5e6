"""Frame-stack files, CSV ingestion and plot-free exports (CSV, PGM).

Frame-stack file layout (little-endian)::

    offset  size        field
    0       4           magic b"ANRA"
    4       2  u16      version (1)
    6       4  u32      width
    10      4  u32      height
    14      4  u32      frame_count
    18      8  f64      dx
    26      8  f64      dy
    34      8  f64      dt
    42      4*N*H*W     payload, f32, frame-major then row-major
    ...     1  u8       mask_flag (0: none, 1: mask section follows)
    ...     N*H*W u8    per-frame per-pixel mask, 1 = valid
"""

from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, IngestionError
from .field import FrameStack, GridSpec, ScalarField

MAGIC = b"ANRA"
VERSION = 1
_HEADER = struct.Struct("<4sHIIIddd")
HEADER_SIZE = _HEADER.size  # 42


def stack_to_bytes(stack: FrameStack) -> bytes:
    g = stack.grid
    vals = np.asarray(stack.values)
    with np.errstate(over="ignore", invalid="ignore"):
        payload = vals.astype("<f4")
    if not np.all(np.isfinite(payload[stack.mask])):
        raise DataError("unmasked values overflow float32")
    parts = [
        _HEADER.pack(MAGIC, VERSION, g.width, g.height, len(stack), g.dx, g.dy, g.dt),
        payload.tobytes(order="C"),
    ]
    if stack.mask.all():
        parts.append(b"\x00")
    else:
        parts.append(b"\x01")
        parts.append(stack.mask.astype(np.uint8).tobytes(order="C"))
    return b"".join(parts)


def write_stack(stack: FrameStack, path) -> None:
    Path(path).write_bytes(stack_to_bytes(stack))


def stack_from_bytes(buf: bytes) -> FrameStack:
    if len(buf) < HEADER_SIZE:
        raise FormatError(f"truncated header: expected {HEADER_SIZE} bytes, got {len(buf)}", len(buf))
    magic, version, width, height, count, dx, dy, dt = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    for name, value, off in (("width", width, 6), ("height", height, 10), ("frame_count", count, 14)):
        if value < 1:
            raise FormatError(f"{name} must be >= 1, got {value}", off)
    for name, value, off in (("dx", dx, 18), ("dy", dy, 26), ("dt", dt, 34)):
        if not (np.isfinite(value) and value > 0):
            raise FormatError(f"{name} must be positive and finite, got {value}", off)
    n = width * height * count
    flag_at = HEADER_SIZE + 4 * n
    if len(buf) < flag_at + 1:
        raise FormatError(f"truncated payload: expected at least {flag_at + 1} bytes, got {len(buf)}", len(buf))
    flag = buf[flag_at]
    if flag not in (0, 1):
        raise FormatError(f"mask_flag must be 0 or 1, got {flag}", flag_at)
    expected = flag_at + 1 + (n if flag else 0)
    if len(buf) != expected:
        raise FormatError(f"size mismatch: expected {expected} bytes, got {len(buf)}", min(len(buf), expected))
    shape = (count, height, width)
    vals = np.frombuffer(buf, dtype="<f4", count=n, offset=HEADER_SIZE).reshape(shape).astype(np.float64)
    if flag:
        raw = np.frombuffer(buf, dtype=np.uint8, count=n, offset=flag_at + 1)
        if np.any(raw > 1):
            bad = int(np.argmax(raw > 1))
            raise FormatError("mask bytes must be 0 or 1", flag_at + 1 + bad)
        mask = raw.reshape(shape).astype(bool)
    else:
        mask = np.ones(shape, dtype=bool)
    bad = mask & ~np.isfinite(vals)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise DataError(f"non-finite value at unmasked pixel (byte offset {HEADER_SIZE + 4 * idx})")
    return FrameStack(GridSpec(width, height, dx, dy, dt), vals, mask)


def read_stack(path) -> FrameStack:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from None
    return stack_from_bytes(buf)


# --- CSV ---------------------------------------------------------------------


def _parse_cell(cell: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        return np.nan
    return v if np.isfinite(v) else np.nan


def read_raster_csv(path) -> np.ndarray:
    """One raster per file; ``,`` or ``;`` delimited; unparsable cells become NaN."""
    path = Path(path)
    lines = [ln.strip() for ln in path.read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise IngestionError(f"{path.name}: empty file")
    delim = ";" if any(";" in ln for ln in lines) else ","
    rows = []
    for i, ln in enumerate(lines, 1):
        if ln.endswith(delim):
            ln = ln[:-1]
        cells = [c.strip() for c in ln.split(delim)]
        if rows and len(cells) != len(rows[0]):
            raise IngestionError(f"{path.name}: line {i} has {len(cells)} cells, expected {len(rows[0])}")
        rows.append([_parse_cell(c) for c in cells])
    return np.array(rows, dtype=np.float64)


def ingest_csv_dir(directory, dx: float, dy: float, dt: float) -> FrameStack:
    """Stack the ``*.csv`` rasters of ``directory`` in lexicographic file order."""
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".csv")
    if not files:
        raise IngestionError(f"no CSV files in {directory}")
    frames = []
    for p in files:
        r = read_raster_csv(p)
        if frames and r.shape != frames[0].shape:
            raise IngestionError(f"{p.name}: raster is {r.shape[0]}x{r.shape[1]}, expected {frames[0].shape[0]}x{frames[0].shape[1]}")
        frames.append(r)
    vals = np.stack(frames)
    grid = GridSpec(vals.shape[2], vals.shape[1], dx, dy, dt)
    return FrameStack(grid, vals, np.isfinite(vals))


def field_to_csv(values: np.ndarray, mask: np.ndarray | None = None) -> str:
    v = np.asarray(values, dtype=np.float64)
    m = np.isfinite(v) if mask is None else np.asarray(mask, dtype=bool)
    return "\n".join(
        ",".join(f"{x:.9g}" if ok else "nan" for x, ok in zip(row, mrow)) for row, mrow in zip(v, m)
    ) + "\n"


def write_field_csv(path, f: ScalarField) -> None:
    Path(path).write_text(field_to_csv(f.values, f.mask))


def read_field_csv(path, grid: GridSpec) -> ScalarField:
    vals = read_raster_csv(path)
    if vals.shape != grid.shape:
        raise IngestionError(f"{Path(path).name}: field is {vals.shape}, grid is {grid.shape}")
    return ScalarField(grid, vals, np.isfinite(vals))


def write_pgm(path, values: np.ndarray, mask: np.ndarray | None = None) -> tuple[float, float]:
    """8-bit binary PGM, min-max scaled over valid pixels (masked -> 0).

    The scale goes to ``<path>.txt`` as ``min=``/``max=`` lines.
    """
    v = np.asarray(values, dtype=np.float64)
    m = np.isfinite(v) if mask is None else (np.asarray(mask, dtype=bool) & np.isfinite(v))
    lo, hi = (float(v[m].min()), float(v[m].max())) if m.any() else (0.0, 0.0)
    span = hi - lo
    scaled = np.zeros(v.shape, dtype=np.uint8)
    if span > 0:
        scaled[m] = np.clip(np.rint((v[m] - lo) / span * 255), 0, 255).astype(np.uint8)
    elif m.any():
        scaled[m] = 128
    h, w = v.shape
    path = Path(path)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + scaled.tobytes())
    Path(str(path) + ".txt").write_text(f"min={lo:.10g}\nmax={hi:.10g}\nmasked_value=0\nlevels=255\n")
    return lo, hi


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if not m:
        raise FormatError(f"{path}: not a binary PGM", 0)
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=m.end()).reshape(h, w)


def write_kv(path, mapping: dict) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in mapping.items()))
