"""Raster and frame-sequence containers.

Arrays are stored row-major as ``(height, width)`` so that ``values[i, j]``
is row ``i``, column ``j``.  Columns advance by ``dx``, rows by ``dy``.
Everything is held in float64; masks are boolean with ``True`` meaning valid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import DimensionError, ParameterError


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    dx: float = 1.0
    dy: float = 1.0
    dt: float = 1.0

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ParameterError("width and height must be integers")
        if self.width < 1 or self.height < 1:
            raise ParameterError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        for name in ("dx", "dy", "dt"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ParameterError(f"{name} must be positive and finite, got {v!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def size(self) -> int:
        return self.width * self.height


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class ScalarField:
    """A 2D raster with a validity mask.

    Values at masked positions carry no meaning and may be NaN.  The arrays
    are made read-only on construction.
    """

    __slots__ = ("grid", "values", "mask")

    def __init__(self, grid: GridSpec, values, mask=None):
        v = np.array(values, dtype=np.float64)
        if v.ndim == 1 and v.size == grid.size:
            v = v.reshape(grid.shape)
        if v.shape != grid.shape:
            raise DimensionError(f"values shape {v.shape} does not match grid {grid.shape}")
        if mask is None:
            m = np.isfinite(v)
        else:
            m = np.array(mask, dtype=bool)
            if m.ndim == 1 and m.size == grid.size:
                m = m.reshape(grid.shape)
            if m.shape != grid.shape:
                raise DimensionError(f"mask shape {m.shape} does not match grid {grid.shape}")
            if not np.all(np.isfinite(v[m])):
                raise ParameterError("non-finite value at an unmasked pixel")
        self.grid = grid
        self.values = _frozen(v)
        self.mask = _frozen(m)

    @classmethod
    def full(cls, grid: GridSpec, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def valid_count(self) -> int:
        return int(self.mask.sum())

    def filled(self, fill: float = 0.0) -> np.ndarray:
        """Writable copy of the values with masked pixels set to ``fill``."""
        return np.where(self.mask, self.values, fill)

    def with_mask(self, mask) -> "ScalarField":
        """Same values, mask narrowed to ``self.mask & mask``."""
        return ScalarField(self.grid, self.values, self.mask & np.asarray(mask, dtype=bool))

    def rot90(self, k: int = 1) -> "ScalarField":
        g = self.grid
        if k % 2:
            g = GridSpec(g.height, g.width, g.dy, g.dx, g.dt)
        return ScalarField(g, np.rot90(self.values, k), np.rot90(self.mask, k))

    def __repr__(self):
        return f"ScalarField({self.grid.height}x{self.grid.width}, valid={self.valid_count})"


def _check_same_grid(a: ScalarField, b: ScalarField):
    if a.grid != b.grid:
        raise DimensionError(f"grid mismatch: {a.grid} vs {b.grid}")


def subtract(a: ScalarField, b: ScalarField) -> ScalarField:
    """Element-wise ``a - b``; a pixel is valid only where both inputs are."""
    _check_same_grid(a, b)
    mask = a.mask & b.mask
    return ScalarField(a.grid, np.where(mask, a.values - b.values, np.nan), mask)


def norm_sq(f: ScalarField) -> float:
    """Sum of squares over unmasked pixels (0 for an empty mask)."""
    v = f.values[f.mask]
    return float(np.dot(v, v))


class FrameStack:
    """Time-ordered frames on one grid; frame ``k`` sits at time ``k * dt``.

    Internally a ``(frames, height, width)`` array plus a matching mask.
    Indexing returns :class:`ScalarField` views of single frames.
    """

    def __init__(self, grid: GridSpec, values, mask=None):
        v = np.array(values, dtype=np.float64)
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3 or v.shape[1:] != grid.shape:
            raise DimensionError(f"stack shape {v.shape} incompatible with grid {grid.shape}")
        if v.shape[0] < 1:
            raise ParameterError("a frame stack needs at least one frame")
        if mask is None:
            m = np.isfinite(v)
        else:
            m = np.array(mask, dtype=bool)
            if m.shape != v.shape:
                raise DimensionError(f"mask shape {m.shape} does not match stack {v.shape}")
            if not np.all(np.isfinite(v[m])):
                raise ParameterError("non-finite value at an unmasked pixel")
        self.grid = grid
        self.values = _frozen(v)
        self.mask = _frozen(m)

    @classmethod
    def from_fields(cls, fields: Sequence[ScalarField]) -> "FrameStack":
        if not fields:
            raise ParameterError("a frame stack needs at least one frame")
        grid = fields[0].grid
        for f in fields[1:]:
            if f.grid != grid:
                raise DimensionError("all frames must share one GridSpec")
        return cls(grid, np.stack([f.values for f in fields]), np.stack([f.mask for f in fields]))

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, k: int) -> ScalarField:
        return ScalarField(self.grid, self.values[k], self.mask[k])

    def __iter__(self) -> Iterator[ScalarField]:
        for k in range(len(self)):
            yield self[k]

    @property
    def frames(self) -> list[ScalarField]:
        return list(self)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.grid.dt

    @property
    def duration(self) -> float:
        return (len(self) - 1) * self.grid.dt

    def with_grid(self, grid: GridSpec) -> "FrameStack":
        """Relabel the metadata (e.g. a different ``dt``) keeping the data."""
        return FrameStack(grid, self.values, self.mask)

    def slice(self, start: int, stop: int) -> "FrameStack":
        return FrameStack(self.grid, self.values[start:stop], self.mask[start:stop])

    def map(self, fn) -> "FrameStack":
        """Apply ``fn`` to the raw ``(N, H, W)`` value array, keep masks."""
        return FrameStack(self.grid, fn(self.values), self.mask)

    def rot90(self, k: int = 1) -> "FrameStack":
        g = self.grid
        if k % 2:
            g = GridSpec(g.height, g.width, g.dy, g.dx, g.dt)
        return FrameStack(g, np.rot90(self.values, k, axes=(1, 2)), np.rot90(self.mask, k, axes=(1, 2)))

    def __repr__(self):
        return f"FrameStack({len(self)} frames, {self.grid.height}x{self.grid.width}, dt={self.grid.dt:g})"
