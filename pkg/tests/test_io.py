import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from anra import io
from anra.errors import DataError, FormatError, IngestionError
from anra.field import FrameStack, GridSpec, ScalarField


def sample_stack(masked=False):
    rng = np.random.default_rng(4)
    vals = rng.normal(size=(3, 4, 5))
    mask = None
    if masked:
        mask = np.ones(vals.shape, bool)
        mask[1, 2, 3] = False
        vals[1, 2, 3] = np.nan
    return FrameStack(GridSpec(5, 4, 0.1, 0.2, 1 / 27), vals, mask)


def test_header_layout():
    buf = io.stack_to_bytes(sample_stack())
    assert io.HEADER_SIZE == 42
    magic, ver, w, h, n, dx, dy, dt = struct.unpack_from("<4sHIIIddd", buf)
    assert (magic, ver, w, h, n) == (b"ANRA", 1, 5, 4, 3)
    assert (dx, dy, dt) == (0.1, 0.2, 1 / 27)
    assert len(buf) == 42 + 4 * 60 + 1 and buf[-1] == 0


@pytest.mark.parametrize("masked", [False, True])
def test_round_trip(tmp_path, masked):
    s = sample_stack(masked)
    p = tmp_path / "s.anra"
    io.write_stack(s, p)
    r = io.read_stack(p)
    assert r.grid == s.grid
    assert np.array_equal(r.mask, s.mask)
    assert np.array_equal(r.values[r.mask], s.values[s.mask].astype(np.float32).astype(np.float64))
    assert io.stack_to_bytes(r) == p.read_bytes()


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4)),
              elements=st.floats(-1e6, 1e6, width=32, allow_nan=False)))
def test_reserialisation_byte_exact(vals):
    s = FrameStack(GridSpec(vals.shape[2], vals.shape[1], 0.5, 0.5, 0.1), vals.astype(np.float64))
    buf = io.stack_to_bytes(s)
    assert io.stack_to_bytes(io.stack_from_bytes(buf)) == buf


def test_truncated():
    buf = io.stack_to_bytes(sample_stack())
    with pytest.raises(FormatError, match="expected .* got") as exc:
        io.stack_from_bytes(buf[:-10])
    assert exc.value.exit_code == 3
    with pytest.raises(FormatError, match="header"):
        io.stack_from_bytes(buf[:20])


def test_bad_magic_and_version():
    buf = bytearray(io.stack_to_bytes(sample_stack()))
    bad = bytes(b"XXXX" + buf[4:])
    with pytest.raises(FormatError, match="magic") as exc:
        io.stack_from_bytes(bad)
    assert exc.value.offset == 0
    buf[4] = 2
    with pytest.raises(FormatError, match="version"):
        io.stack_from_bytes(bytes(buf))


def test_zero_width():
    buf = bytearray(io.stack_to_bytes(sample_stack()))
    buf[6:10] = struct.pack("<I", 0)
    with pytest.raises(FormatError, match="width"):
        io.stack_from_bytes(bytes(buf))


def test_nan_in_unmasked_payload():
    buf = bytearray(io.stack_to_bytes(sample_stack()))
    buf[42 + 8 : 42 + 12] = struct.pack("<f", float("nan"))
    with pytest.raises(DataError) as exc:
        io.stack_from_bytes(bytes(buf))
    assert exc.value.exit_code == 3


def test_bad_mask_flag_and_bytes():
    buf = bytearray(io.stack_to_bytes(sample_stack()))
    buf[-1] = 7
    with pytest.raises(FormatError, match="mask_flag"):
        io.stack_from_bytes(bytes(buf))
    mbuf = bytearray(io.stack_to_bytes(sample_stack(masked=True)))
    mbuf[-1] = 9
    with pytest.raises(FormatError, match="mask bytes"):
        io.stack_from_bytes(bytes(mbuf))


def test_trailing_garbage():
    buf = io.stack_to_bytes(sample_stack()) + b"\x00"
    with pytest.raises(FormatError, match="size mismatch"):
        io.stack_from_bytes(buf)


def test_missing_file(tmp_path):
    with pytest.raises(FormatError):
        io.read_stack(tmp_path / "nope.anra")


def test_ingest_csv_dir(tmp_path):
    (tmp_path / "f000.csv").write_text("0,0\n0,0\n")
    (tmp_path / "f001.csv").write_text("0;0\n0;0\n")
    s = io.ingest_csv_dir(tmp_path, 0.1, 0.1, 1 / 27)
    assert len(s) == 2 and s.grid.shape == (2, 2)
    assert np.all(s.values == 0)


def test_ingest_nan_cell_masked(tmp_path):
    (tmp_path / "a.csv").write_text("1.5,NaN\n2,oops\n")
    s = io.ingest_csv_dir(tmp_path, 1, 1, 1)
    assert s.mask[0].tolist() == [[True, False], [True, False]]


def test_ingest_dimension_mismatch(tmp_path):
    (tmp_path / "a.csv").write_text("1,2\n3,4\n")
    (tmp_path / "b.csv").write_text("1,2,3\n3,4,5\n")
    with pytest.raises(IngestionError, match="b.csv"):
        io.ingest_csv_dir(tmp_path, 1, 1, 1)
    (tmp_path / "b.csv").write_text("1,2\n3\n")
    with pytest.raises(IngestionError, match="b.csv"):
        io.ingest_csv_dir(tmp_path, 1, 1, 1)


def test_ingest_empty_dir(tmp_path):
    with pytest.raises(IngestionError):
        io.ingest_csv_dir(tmp_path, 1, 1, 1)


def test_ingest_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    d = tmp_path / "frames"
    d.mkdir()
    for k in range(3):
        np.savetxt(d / f"{k:03d}.csv", rng.normal(size=(4, 6)).astype(np.float32), delimiter=",")
    s = io.ingest_csv_dir(d, 0.1, 0.1, 0.5)
    io.write_stack(s, tmp_path / "s.anra")
    r = io.read_stack(tmp_path / "s.anra")
    assert np.array_equal(r.values, s.values.astype(np.float32).astype(np.float64))
    assert r.grid == s.grid


def test_field_csv_round_trip(tmp_path):
    g = GridSpec(3, 2)
    f = ScalarField(g, [[1.0, np.nan, 3.0], [4.0, 5.0, 6.0]])
    io.write_field_csv(tmp_path / "f.csv", f)
    r = io.read_field_csv(tmp_path / "f.csv", g)
    assert np.array_equal(r.mask, f.mask)
    assert np.array_equal(r.values[r.mask], f.values[f.mask])


def test_pgm(tmp_path):
    v = np.array([[0.0, 1.0], [2.0, 4.0]])
    m = np.array([[True, True], [True, False]])
    lo, hi = io.write_pgm(tmp_path / "x.pgm", v, m)
    assert (lo, hi) == (0.0, 2.0)
    img = io.read_pgm(tmp_path / "x.pgm")
    assert img.tolist() == [[0, 128], [255, 0]]
    side = (tmp_path / "x.pgm.txt").read_text()
    assert "min=0" in side and "max=2" in side
