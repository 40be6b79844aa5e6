"""Differentiator stencils and valid-region convolution.

The noise-robust kernels are Holoborodko's smooth differentiators: exact on
low-degree polynomials, with as many zeros as the remaining degrees of
freedom allow placed at the Nyquist frequency.  Centered first-derivative
kernels come from the binomial closed form; the one-sided and second-order
kernels are obtained by solving the moment + Nyquist-zero system, which
reproduces the published tables (e.g. ``(5, 2, -8, -2, 3) / 8`` for the
five-tap backward filter).

Convolution never pads.  Output pixels whose stencil leaves the domain or
touches a masked input are masked.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Sequence, Union

import numpy as np

from .errors import DimensionError, HistoryError, ParameterError
from .field import FrameStack, ScalarField

Offset = Union[int, tuple[int, int]]

TEMPORAL_LENGTHS = (4, 5, 6, 7, 8)
SPATIAL_FIRST_LENGTHS = (5, 7, 9, 11)
SPATIAL_SECOND_LENGTHS = (5, 7, 9)


@dataclass(frozen=True)
class FilterKernel:
    """Convolution stencil ``sum_k c_k f[x + offset_k]`` scaled by ``h**-scale_power``.

    ``offsets`` holds ints for 1D kernels and ``(row, col)`` pairs for 2D
    stencils.  ``scale_power`` is the derivative order and ``design_degree``
    the highest polynomial degree the kernel differentiates exactly.
    """

    offsets: tuple
    coefficients: tuple
    scale_power: int
    design_degree: int
    name: str = ""

    def __post_init__(self):
        if len(self.offsets) != len(self.coefficients):
            raise ParameterError("offsets and coefficients differ in length")
        if len(set(self.offsets)) != len(self.offsets):
            raise ParameterError("kernel offsets must be distinct")
        if not self.offsets:
            raise ParameterError("empty kernel")

    @property
    def ndim(self) -> int:
        return 2 if isinstance(self.offsets[0], tuple) else 1

    @property
    def length(self) -> int:
        return len(self.offsets)

    @property
    def history(self) -> int:
        """Samples needed behind the evaluation point (1D kernels)."""
        return -min(self.offsets)

    @property
    def is_backward(self) -> bool:
        return self.ndim == 1 and max(self.offsets) == 0

    @property
    def is_centered(self) -> bool:
        if self.ndim == 1:
            return min(self.offsets) == -max(self.offsets)
        rows = [o[0] for o in self.offsets]
        cols = [o[1] for o in self.offsets]
        return min(rows) == -max(rows) and min(cols) == -max(cols)

    def as_arrays(self):
        return np.asarray(self.offsets), np.asarray(self.coefficients, dtype=np.float64)

    def moment(self, p: int) -> float:
        """``sum c_k * offset_k**p`` (1D kernels)."""
        o, c = self.as_arrays()
        return float(np.sum(c * o.astype(np.float64) ** p))

    def response(self, omega):
        """Complex transfer function ``sum c_k exp(i*omega*offset_k)`` (1D)."""
        o, c = self.as_arrays()
        w = np.atleast_1d(np.asarray(omega, dtype=np.float64))
        return np.exp(1j * np.outer(w, o)) @ c

    def nyquist_response(self) -> float:
        o, c = self.as_arrays()
        return float(abs(np.sum(c * (-1.0) ** o)))


def _solve(rows, rhs) -> np.ndarray:
    return np.linalg.solve(np.asarray(rows, dtype=np.float64), np.asarray(rhs, dtype=np.float64))


def make_temporal_backward(length: int = 8) -> FilterKernel:
    """One-sided smooth differentiator for d/dt at the newest sample.

    Exact on quadratics; the remaining ``length - 3`` degrees of freedom put
    a zero of that multiplicity at the Nyquist frequency.
    """
    if length not in TEMPORAL_LENGTHS:
        raise ParameterError(f"temporal length must be one of {TEMPORAL_LENGTHS}, got {length}")
    degree = 2
    o = -np.arange(length, dtype=np.float64)
    rows, rhs = [], []
    for p in range(degree + 1):
        rows.append(o**p)
        rhs.append(1.0 if p == 1 else 0.0)
    sign = (-1.0) ** np.arange(length)
    for j in range(length - degree - 1):
        rows.append(sign * o**j)
        rhs.append(0.0)
    c = _solve(rows, rhs)
    return FilterKernel(
        tuple(int(v) for v in o), tuple(float(v) for v in c), 1, degree, f"backward-{length}"
    )


def make_spatial_first(length: int = 9) -> FilterKernel:
    """Centered smooth first-derivative kernel, exact on quadratics."""
    if length not in SPATIAL_FIRST_LENGTHS:
        raise ParameterError(f"spatial first-derivative length must be one of {SPATIAL_FIRST_LENGTHS}")
    m = (length - 3) // 2
    n = (length - 1) // 2

    def binom(k):
        return comb(2 * m, k) if 0 <= k <= 2 * m else 0

    half = {k: (binom(m - k + 1) - binom(m - k - 1)) / 2 ** (2 * m + 1) for k in range(1, n + 1)}
    offsets = tuple(range(-n, n + 1))
    coeffs = tuple(0.0 if k == 0 else (half[k] if k > 0 else -half[-k]) for k in offsets)
    return FilterKernel(offsets, coeffs, 1, 2, f"first-{length}")


def _direct_second(length: int) -> np.ndarray:
    # symmetric: unknowns c_0..c_n; two moment rows, n-1 Nyquist-zero rows
    n = (length - 1) // 2
    k = np.arange(n + 1, dtype=np.float64)
    w = np.where(k == 0, 1.0, 2.0)
    rows = [w, w * k**2]
    rhs = [0.0, 2.0]
    for j in range(n - 1):
        rows.append(w * (-1.0) ** k * k ** (2 * j))
        rhs.append(0.0)
    half = _solve(rows, rhs)
    return half[np.abs(np.arange(-n, n + 1))]


def make_spatial_second(length: int = 9, form: str = "direct") -> FilterKernel:
    """Centered smooth second-derivative kernel.

    ``form="direct"`` solves for a ``length``-tap stencil; ``form="product"``
    convolves the first-derivative kernel of that length with itself, giving
    a ``2*length - 1`` tap stencil.
    """
    if length not in SPATIAL_SECOND_LENGTHS:
        raise ParameterError(f"spatial second-derivative length must be one of {SPATIAL_SECOND_LENGTHS}")
    if form == "direct":
        c = _direct_second(length)
    elif form == "product":
        first = np.asarray(make_spatial_first(length).coefficients)
        c = np.convolve(first, first)
    else:
        raise ParameterError(f"unknown second-derivative form {form!r}")
    n = (len(c) - 1) // 2
    return FilterKernel(tuple(range(-n, n + 1)), tuple(float(v) for v in c), 2, 3, f"second-{form}-{length}")


def make_baseline_backward_diff() -> FilterKernel:
    return FilterKernel((0, -1), (1.0, -1.0), 1, 1, "backward-2")


def _disk_offsets(radius: int):
    r = np.arange(-radius, radius + 1)
    ii, jj = np.meshgrid(r, r, indexing="ij")
    return ii.ravel(), jj.ravel()


def _check_sigma(sigma, radius):
    if not (np.isfinite(sigma) and sigma > 0):
        raise ParameterError(f"sigma must be positive, got {sigma!r}")
    if int(radius) != radius or radius < 1:
        raise ParameterError(f"radius must be an integer >= 1, got {radius!r}")


def make_baseline_log(sigma: float = 1.0, radius: int = 3) -> FilterKernel:
    """Sampled Laplacian-of-Gaussian on a ``(2r+1)^2`` square.

    The samples are shifted to zero sum and rescaled so that the stencil
    returns exactly 4 on ``x**2 + y**2``.
    """
    _check_sigma(sigma, radius)
    ii, jj = _disk_offsets(int(radius))
    r2 = (ii**2 + jj**2).astype(np.float64)
    c = (r2 - 2 * sigma**2) / sigma**4 * np.exp(-r2 / (2 * sigma**2))
    c -= c.mean()
    c *= 4.0 / np.sum(c * r2)
    offsets = tuple((int(a), int(b)) for a, b in zip(ii, jj))
    return FilterKernel(offsets, tuple(float(v) for v in c), 2, 3, f"log-{sigma:g}-{radius}")


def make_baseline_gaussian(sigma: float = 2.0, radius: int = 6) -> FilterKernel:
    _check_sigma(sigma, radius)
    ii, jj = _disk_offsets(int(radius))
    c = np.exp(-(ii**2 + jj**2) / (2 * sigma**2))
    c /= c.sum()
    offsets = tuple((int(a), int(b)) for a, b in zip(ii, jj))
    return FilterKernel(offsets, tuple(float(v) for v in c), 0, 1, f"gauss-{sigma:g}-{radius}")


# --- application ----------------------------------------------------------


def apply_temporal(stack: FrameStack, kernel: FilterKernel, k: int) -> ScalarField:
    """Per-pixel time derivative at frame ``k`` using a backward kernel."""
    if kernel.ndim != 1 or not kernel.is_backward:
        raise ParameterError("temporal kernels must be one-sided backward 1D kernels")
    need = kernel.history
    if k < need or k >= len(stack):
        raise HistoryError(
            f"frame {k}: kernel {kernel.name or kernel.length} needs frames {k - need}..{k}, "
            f"i.e. at least {need + 1} frames ending at k (stack has {len(stack)})"
        )
    acc = np.zeros(stack.grid.shape)
    mask = np.ones(stack.grid.shape, dtype=bool)
    for o, c in zip(kernel.offsets, kernel.coefficients):
        m = stack.mask[k + o]
        acc += c * np.where(m, stack.values[k + o], 0.0)
        mask &= m
    acc /= stack.grid.dt**kernel.scale_power
    return ScalarField(stack.grid, np.where(mask, acc, np.nan), mask)


_AXES = {"rows": 0, "cols": 1, 0: 0, 1: 1}


def _shift_sum(values, mask, taps):
    """Valid-region correlation ``sum c * f[p + o]`` over ``taps = [((di, dj), c)]``."""
    h, w = values.shape
    di = [t[0][0] for t in taps]
    dj = [t[0][1] for t in taps]
    r0, r1 = -min(di), h - max(di)
    c0, c1 = -min(dj), w - max(dj)
    if r1 <= r0 or c1 <= c0:
        raise DimensionError(f"field {h}x{w} is smaller than the kernel footprint")
    src = np.where(mask, values, 0.0)
    acc = np.zeros((r1 - r0, c1 - c0))
    ok = np.ones((r1 - r0, c1 - c0), dtype=bool)
    for (a, b), c in taps:
        acc += c * src[r0 + a : r1 + a, c0 + b : c1 + b]
        ok &= mask[r0 + a : r1 + a, c0 + b : c1 + b]
    out = np.full((h, w), np.nan)
    out_mask = np.zeros((h, w), dtype=bool)
    out[r0:r1, c0:c1] = np.where(ok, acc, np.nan)
    out_mask[r0:r1, c0:c1] = ok
    return out, out_mask


def apply_spatial(field: ScalarField, kernel: FilterKernel, axis="cols") -> ScalarField:
    """Derivative along ``axis``: ``"cols"`` steps in j (dx), ``"rows"`` in i (dy)."""
    if kernel.ndim != 1:
        raise ParameterError("apply_spatial takes a 1D kernel; use apply_2d for stencils")
    try:
        ax = _AXES[axis]
    except KeyError:
        raise ParameterError(f"axis must be 'rows' or 'cols', got {axis!r}") from None
    if ax == 0:
        taps = [((o, 0), c) for o, c in zip(kernel.offsets, kernel.coefficients)]
        h = field.grid.dy
    else:
        taps = [((0, o), c) for o, c in zip(kernel.offsets, kernel.coefficients)]
        h = field.grid.dx
    out, mask = _shift_sum(field.values, field.mask, taps)
    out /= h**kernel.scale_power
    return ScalarField(field.grid, out, mask)


def apply_2d(field: ScalarField, kernel: FilterKernel) -> ScalarField:
    """Apply a 2D stencil; derivative scaling assumes square pixels."""
    if kernel.ndim != 2:
        raise ParameterError("apply_2d takes a 2D stencil")
    g = field.grid
    if kernel.scale_power and not np.isclose(g.dx, g.dy, rtol=1e-9, atol=0.0):
        raise ParameterError("2D derivative stencils require dx == dy")
    out, mask = _shift_sum(field.values, field.mask, list(zip(kernel.offsets, kernel.coefficients)))
    out /= (g.dx * g.dy) ** (kernel.scale_power / 2)
    return ScalarField(g, out, mask)


def laplacian(field: ScalarField, kernel2: FilterKernel) -> ScalarField:
    """``d2/drow2 + d2/dcol2`` with a 1D second-derivative kernel, or a 2D stencil directly."""
    if kernel2.scale_power != 2:
        raise ParameterError("laplacian needs a second-derivative kernel")
    if kernel2.ndim == 2:
        return apply_2d(field, kernel2)
    a = apply_spatial(field, kernel2, "rows")
    b = apply_spatial(field, kernel2, "cols")
    mask = a.mask & b.mask
    return ScalarField(field.grid, np.where(mask, a.values + b.values, np.nan), mask)


def smooth_stack(stack: FrameStack, kernel: FilterKernel, frames: Sequence[int]) -> FrameStack:
    """Smooth selected frames with a 2D zero-order stencil (baseline preprocessing)."""
    if kernel.scale_power != 0:
        raise ParameterError("smoothing kernels have scale_power 0")
    vals = stack.values.copy()
    mask = stack.mask.copy()
    for k in frames:
        f = apply_2d(stack[k], kernel)
        vals[k] = f.values
        mask[k] = f.mask
    return FrameStack(stack.grid, vals, mask)
