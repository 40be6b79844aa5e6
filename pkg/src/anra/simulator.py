"""Explicit forward solver for the 2D heat equation.

The update is the conservative five-point scheme
``T += dt_sub * div(a grad T)`` with face diffusivities taken as the harmonic
mean of the two neighbouring pixels, which reduces to the classical FTCS
Laplacian for constant ``a``.  Each output sample period is split into
``n`` equal sub-steps with ``a_max * dt_sub * (1/dx^2 + 1/dy^2) <= 1/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import InfeasibleParameterError, ParameterError, StabilityError
from .field import FrameStack, GridSpec, ScalarField

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
BOUNDARIES = ("insulated", "fixed")


@dataclass(frozen=True)
class GaussianBlob:
    """Gaussian initial field; ``diameter_px`` is read as the FWHM in pixels.

    The centre is in pixel coordinates and defaults to the grid centre.
    """

    amplitude: float = 3.8
    diameter_px: float = 50.0
    center: Optional[tuple] = None

    def sigma(self, h: float) -> float:
        return self.diameter_px * h * FWHM_TO_SIGMA

    def render(self, grid: GridSpec) -> np.ndarray:
        ci, cj = self.center if self.center is not None else ((grid.height - 1) / 2, (grid.width - 1) / 2)
        y = (np.arange(grid.height) - ci) * grid.dy
        x = (np.arange(grid.width) - cj) * grid.dx
        sx, sy = self.sigma(grid.dx), self.sigma(grid.dy)
        return self.amplitude * np.exp(-(y[:, None] ** 2) / (2 * sy**2) - x[None, :] ** 2 / (2 * sx**2))


@dataclass(frozen=True)
class ScenarioConfig:
    grid: GridSpec
    a_true: Union[float, np.ndarray] = 0.2
    initial: Union[GaussianBlob, np.ndarray] = field(default_factory=GaussianBlob)
    duration: float = 1.0
    noise_sigma: float = 0.0
    rng_seed: int = 0
    boundary: str = "insulated"

    @classmethod
    def reference(cls, seed: int = 0, noise_sigma: float = 0.01) -> "ScenarioConfig":
        """224 x 224 pixels over 10 x 10 units, 27 Hz, 1 s, a = 0.2."""
        h = 10.0 / 224
        return cls(GridSpec(224, 224, h, h, 1.0 / 27), 0.2, GaussianBlob(3.8, 50.0), 1.0, noise_sigma, seed)

    @property
    def frame_count(self) -> int:
        return int(round(self.duration / self.grid.dt)) + 1

    def initial_field(self) -> np.ndarray:
        if isinstance(self.initial, GaussianBlob):
            return self.initial.render(self.grid)
        ic = np.asarray(self.initial, dtype=np.float64)
        if ic.shape != self.grid.shape:
            raise ParameterError(f"initial field shape {ic.shape} does not match grid {self.grid.shape}")
        return ic

    def describe(self) -> dict:
        """Flat key=value echo of the scenario, including derived quantities."""
        g = self.grid
        d = {
            "width": g.width, "height": g.height, "dx": g.dx, "dy": g.dy, "dt": g.dt,
            "duration_s": self.duration, "frames": self.frame_count,
            "noise.sigma": self.noise_sigma, "seed": self.rng_seed, "boundary": self.boundary,
        }
        if np.ndim(self.a_true) == 0:
            d["a"] = float(self.a_true)
        else:
            d["a.min"], d["a.max"] = float(np.min(self.a_true)), float(np.max(self.a_true))
        if isinstance(self.initial, GaussianBlob):
            d["ic.amplitude"] = self.initial.amplitude
            d["ic.diameter_px"] = self.initial.diameter_px
            d["ic.diameter_meaning"] = "fwhm"
            d["ic.sigma_x"] = self.initial.sigma(g.dx)
            d["ic.sigma_y"] = self.initial.sigma(g.dy)
        d["substeps"] = substeps_for(a_max(self.a_true), g)
        return d


def a_max(a) -> float:
    return float(np.max(a))


def substeps_for(amax: float, grid: GridSpec, max_substeps: int = 1_000_000) -> int:
    """Smallest sub-step count that keeps the explicit update stable."""
    if amax <= 0:
        return 1
    limit = 0.5 / (amax * (1.0 / grid.dx**2 + 1.0 / grid.dy**2))
    n = max(1, math.ceil(grid.dt / limit * (1 - 1e-12)))
    if n > max_substeps:
        raise StabilityError(f"stability needs {n} sub-steps per frame, more than the allowed {max_substeps}")
    return n


def _face_coefficients(a: np.ndarray, grid: GridSpec, boundary: str):
    """Harmonic-mean diffusivities on vertical and horizontal pixel faces, over h^2."""
    with np.errstate(divide="ignore", invalid="ignore"):
        hy = np.where(a[1:] + a[:-1] > 0, 2 * a[1:] * a[:-1] / (a[1:] + a[:-1]), 0.0)
        hx = np.where(a[:, 1:] + a[:, :-1] > 0, 2 * a[:, 1:] * a[:, :-1] / (a[:, 1:] + a[:, :-1]), 0.0)
    return hy / grid.dy**2, hx / grid.dx**2


def _step(T, ky, kx, dt_sub, out):
    fy = ky * (T[1:] - T[:-1])
    fx = kx * (T[:, 1:] - T[:, :-1])
    out[...] = T
    out[:-1] += dt_sub * fy
    out[1:] -= dt_sub * fy
    out[:, :-1] += dt_sub * fx
    out[:, 1:] -= dt_sub * fx
    return out


def integrate(
    initial: np.ndarray,
    a,
    grid: GridSpec,
    n_frames: int,
    boundary: str = "insulated",
    max_substeps: int = 1_000_000,
    substeps: Optional[int] = None,
) -> np.ndarray:
    """Noise-free solution sampled every ``grid.dt``; returns ``(n_frames, H, W)``.

    ``substeps`` forces a sub-step count (it must still satisfy the
    stability bound).
    """
    if boundary not in BOUNDARIES:
        raise ParameterError(f"boundary must be one of {BOUNDARIES}, got {boundary!r}")
    T = np.array(initial, dtype=np.float64)
    if not np.all(np.isfinite(T)):
        raise ParameterError("initial condition must be finite")
    a_arr = np.broadcast_to(np.asarray(a, dtype=np.float64), grid.shape)
    if np.any(a_arr < 0) or not np.all(np.isfinite(a_arr)):
        raise InfeasibleParameterError("diffusivity must be finite and non-negative")
    n = substeps_for(a_max(a_arr), grid, max_substeps)
    if substeps is not None:
        if substeps < n:
            raise StabilityError(f"{substeps} sub-steps per frame is unstable; need at least {n}")
        n = int(substeps)
    dt_sub = grid.dt / n
    ky, kx = _face_coefficients(a_arr, grid, boundary)
    out = np.empty((n_frames,) + grid.shape)
    out[0] = T
    if n_frames == 1 or a_max(a_arr) == 0:
        out[1:] = T
        return out
    edge = T.copy()
    buf = np.empty_like(T)
    for f in range(1, n_frames):
        for _ in range(n):
            _step(T, ky, kx, dt_sub, buf)
            T, buf = buf, T
            if boundary == "fixed":
                T[0], T[-1], T[:, 0], T[:, -1] = edge[0], edge[-1], edge[:, 0], edge[:, -1]
        out[f] = T
    return out


def simulate(config: ScenarioConfig, max_substeps: int = 1_000_000) -> FrameStack:
    """Forward-simulate a scenario and add seeded measurement noise to each frame."""
    if config.noise_sigma < 0:
        raise ParameterError("noise_sigma must be >= 0")
    if config.duration < 0:
        raise ParameterError("duration must be >= 0")
    clean = integrate(
        config.initial_field(), config.a_true, config.grid, config.frame_count, config.boundary, max_substeps
    )
    if config.noise_sigma > 0:
        rng = np.random.default_rng(config.rng_seed)
        clean = clean + rng.normal(0.0, config.noise_sigma, clean.shape)
    return FrameStack(config.grid, clean)


def _fill_masked(f: ScalarField) -> np.ndarray:
    if f.mask.all():
        return np.array(f.values)
    if not f.mask.any():
        raise ParameterError("initial frame is fully masked")
    return f.filled(float(np.mean(f.values[f.mask])))


def predict(initial: ScalarField, a_hat, duration: float, grid: Optional[GridSpec] = None,
            boundary: str = "insulated") -> FrameStack:
    """Noise-free forward prediction from ``initial`` over ``duration`` seconds.

    ``a_hat`` may be a scalar or a :class:`~anra.estimator.DiffusivityField`;
    masked pixels of a field are filled with the median of the valid ones.
    Masked pixels of ``initial`` are filled with its valid mean.
    """
    grid = grid or initial.grid
    a = _diffusivity_array(a_hat, grid)
    n_frames = int(round(duration / grid.dt)) + 1
    if n_frames < 1:
        raise ParameterError("duration must be >= 0")
    return FrameStack(grid, integrate(_fill_masked(initial), a, grid, n_frames, boundary))


def _diffusivity_array(a_hat, grid: GridSpec):
    fld = getattr(a_hat, "field", a_hat)
    if isinstance(fld, ScalarField):
        if fld.grid.shape != grid.shape:
            raise ParameterError("diffusivity field does not match the grid")
        if not fld.mask.any():
            raise InfeasibleParameterError("diffusivity field is fully masked")
        vals = fld.values[fld.mask]
        if np.any(vals <= 0):
            raise InfeasibleParameterError("diffusivity estimate is <= 0 somewhere; cannot predict")
        return np.where(fld.mask, fld.values, float(np.median(vals)))
    a = float(a_hat)
    # a = 0 is the trivial no-diffusion case; negative values are infeasible
    if not np.isfinite(a) or a < 0:
        raise InfeasibleParameterError(f"diffusivity must be >= 0, got {a_hat!r}")
    return a


def load_scenario(path) -> ScenarioConfig:
    """Parse a ``key=value`` scenario file (``#`` comments, optional quotes)."""
    text = Path(path).read_text()
    kv = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        if "=" not in line:
            raise ParameterError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        kv[k] = v.strip("'\"")
    return scenario_from_mapping(kv)


def scenario_from_mapping(kv: dict) -> ScenarioConfig:
    known = {
        "width", "height", "dx", "dy", "dt", "a", "ic.amplitude", "ic.diameter_px",
        "ic.center_row", "ic.center_col", "noise.sigma", "duration_s", "seed", "boundary",
    }
    unknown = set(kv) - known
    if unknown:
        raise ParameterError(f"unknown scenario keys: {sorted(unknown)}")
    try:
        width = int(kv.get("width", 224))
        height = int(kv.get("height", width))
        dx = float(kv.get("dx", 10.0 / width))
        dy = float(kv.get("dy", dx))
        dt = float(kv.get("dt", 1.0 / 27))
        center = None
        if "ic.center_row" in kv or "ic.center_col" in kv:
            center = (float(kv.get("ic.center_row", (height - 1) / 2)), float(kv.get("ic.center_col", (width - 1) / 2)))
        blob = GaussianBlob(float(kv.get("ic.amplitude", 3.8)), float(kv.get("ic.diameter_px", 50)), center)
        cfg = ScenarioConfig(
            GridSpec(width, height, dx, dy, dt),
            float(kv.get("a", 0.2)),
            blob,
            float(kv.get("duration_s", 1.0)),
            float(kv.get("noise.sigma", 0.0)),
            int(kv.get("seed", 0)),
            kv.get("boundary", "insulated"),
        )
    except ValueError as exc:
        raise ParameterError(f"bad scenario value: {exc}") from None
    if cfg.boundary not in BOUNDARIES:
        raise ParameterError(f"boundary must be one of {BOUNDARIES}")
    if cfg.a_true < 0:
        raise ParameterError("a must be >= 0")
    if cfg.noise_sigma < 0 or cfg.duration < 0:
        raise ParameterError("noise.sigma and duration_s must be >= 0")
    return cfg
