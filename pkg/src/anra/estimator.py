"""Direct diffusivity estimation from frame stacks.

Per frame, the heat equation ``dT/dt = a * lap(T)`` is balanced pixel by
pixel: the ratio of the temporal derivative to the Laplacian is averaged with
RTC attention weights over the pixels that pass the confidence cut.  Frames
are then pooled into one scalar.  A windowed variant repeats the weighted
average inside sliding windows to build a diffusivity map.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import attention
from .errors import (
    DegenerateAttentionError,
    DimensionError,
    EstimationError,
    HistoryError,
    ParameterError,
)
from .field import FrameStack, ScalarField
from .filters import (
    apply_2d,
    apply_temporal,
    laplacian,
    make_baseline_backward_diff,
    make_baseline_gaussian,
    make_baseline_log,
    make_spatial_second,
    make_temporal_backward,
)

log = logging.getLogger(__name__)

ANRA = "ANRA"
BACKWARD_LOG = "backward+LoG"
BACKWARD_LOG_SMOOTH = "backward+LoG+smooth"
BASELINES = (BACKWARD_LOG, BACKWARD_LOG_SMOOTH)


@dataclass(frozen=True)
class EstimatorConfig:
    """Knobs of the ANRA estimator.

    ``eps_den`` (absolute) overrides ``eps_factor`` (relative to the median
    absolute Laplacian of the frame).  ``quantile=None`` disables the
    confidence cut.
    """

    temporal_length: int = 8
    spatial_length: int = 9
    second_form: str = "direct"
    quantile: Optional[float] = 0.925
    eps_factor: float = 3.5
    eps_den: Optional[float] = None
    ratio_clamp: float = 1e6
    aggregation: str = "mass"

    def __post_init__(self):
        if self.quantile is not None and not 0.0 < self.quantile < 1.0:
            raise ParameterError(f"quantile must lie in (0, 1), got {self.quantile!r}")
        if not (np.isfinite(self.eps_factor) and self.eps_factor >= 0):
            raise ParameterError("eps_factor must be a non-negative number")
        if self.eps_den is not None and not (np.isfinite(self.eps_den) and self.eps_den >= 0):
            raise ParameterError("eps_den must be a non-negative number")
        if not self.ratio_clamp > 0:
            raise ParameterError("ratio_clamp must be positive")
        if self.aggregation not in ("mass", "mean"):
            raise ParameterError("aggregation must be 'mass' or 'mean'")
        # kernel constructors validate the lengths
        self.kernels()

    def kernels(self):
        return (
            make_temporal_backward(self.temporal_length),
            make_spatial_second(self.spatial_length, self.second_form),
        )


@dataclass(frozen=True)
class BaselineConfig:
    """Non-robust comparators: two-point backward difference and sampled LoG.

    The smoothing variant runs the Gaussian over the frame before the LoG.
    The denominator guard only removes (near-)exact zeros, as a naive
    implementation would.
    """

    log_sigma: float = 1.0
    log_radius: int = 3
    smooth_sigma: float = 2.0
    smooth_radius: int = 6
    eps_factor: float = 1e-3
    ratio_clamp: float = 1e6
    aggregation: str = "mean"


@dataclass
class FrameEstimate:
    index: int
    a_hat: float
    retained_mass: float
    masked_denominator: int
    masked_ratio: int = 0
    valid_pixels: int = 0
    kept_pixels: int = 0
    degenerate: bool = False
    clamped: int = 0


@dataclass
class EstimateReport:
    a_hat: float
    per_frame: list
    method: str = ANRA
    aggregation: str = "mass"
    skipped: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.a_hat > 0

    @property
    def frame_estimates(self) -> np.ndarray:
        return np.array([f.a_hat for f in self.per_frame])

    def to_text(self) -> str:
        lines = [
            f"method={self.method}",
            f"a_hat={self.a_hat:.10g}",
            f"feasible={'yes' if self.feasible else 'no'}",
            f"aggregation={self.aggregation}",
            f"frames_used={len(self.per_frame)}",
            f"frames_skipped={len(self.skipped)}",
            f"degenerate_frames={sum(f.degenerate for f in self.per_frame)}",
            f"mean_retained_mass={np.mean([f.retained_mass for f in self.per_frame]):.10g}",
            f"masked_denominator_total={sum(f.masked_denominator for f in self.per_frame)}",
            f"masked_ratio_total={sum(f.masked_ratio for f in self.per_frame)}",
        ]
        lines += [f"config.{k}={v}" for k, v in self.config.items()]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        cols = [
            "frame", "a_hat", "retained_mass", "masked_denominator", "masked_ratio",
            "valid_pixels", "kept_pixels", "degenerate", "clamped",
        ]
        rows = [",".join(cols)]
        for f in self.per_frame:
            rows.append(
                f"{f.index},{f.a_hat:.10g},{f.retained_mass:.10g},{f.masked_denominator},"
                f"{f.masked_ratio},{f.valid_pixels},{f.kept_pixels},{int(f.degenerate)},{f.clamped}"
            )
        return "\n".join(rows) + "\n"


@dataclass(frozen=True)
class DiffusivityField:
    field: ScalarField
    window: tuple

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    @property
    def mask(self) -> np.ndarray:
        return self.field.mask


# --- per-frame machinery ----------------------------------------------------


@dataclass
class _Prepared:
    """Derivatives of one frame after the global guards."""

    index: int
    rate: np.ndarray  # dT/dt, full grid
    ratio: np.ndarray  # dT/dt / lap, full grid
    valid: np.ndarray  # derivative stencils fully inside + unmasked
    survivors: np.ndarray  # valid and past the denominator/ratio guards
    masked_denominator: int
    masked_ratio: int


def _guard(index, dT, lap, eps_factor, eps_den, ratio_clamp) -> _Prepared:
    valid = dT.mask & lap.mask
    if not valid.any():
        raise EstimationError(f"frame {index}: no pixel inside the derivative valid region", {"valid": 0})
    lap_abs = np.abs(lap.values)
    eps = eps_den if eps_den is not None else eps_factor * float(np.median(lap_abs[valid]))
    den_ok = valid & (lap_abs >= eps) & (lap_abs > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den_ok, dT.values / np.where(den_ok, lap.values, 1.0), np.nan)
    survivors = den_ok & (np.abs(ratio) <= ratio_clamp)
    return _Prepared(
        index,
        dT.values,
        ratio,
        valid,
        survivors,
        int(valid.sum() - den_ok.sum()),
        int(den_ok.sum() - survivors.sum()),
    )


def _attend(rate: np.ndarray, ratio: np.ndarray, quantile):
    """Weighted mean of ``ratio`` under RTC weights built from ``rate``.

    Returns ``(a_hat, retained_mass, kept, degenerate, clamped)``.
    """
    abs_rate = np.abs(rate)
    clamped = int(np.count_nonzero(abs_rate > attention.EXP_CLAMP))
    try:
        w = attention.rtc_weights(abs_rate)
        degenerate = False
    except DegenerateAttentionError:
        w = np.full(ratio.size, 1.0 / ratio.size)
        degenerate = True
    if quantile is not None:
        keep = attention.quantile_keep(w, quantile)
        w = w[keep]
        ratio = ratio[keep]
        mass = float(w.sum())
        w = w / mass
    else:
        mass = 1.0
    return float(np.dot(w, ratio)), mass, int(ratio.size), degenerate, clamped


def _prepare(stack: FrameStack, k: int, cfg: EstimatorConfig) -> _Prepared:
    kt, k2 = cfg.kernels()
    dT = apply_temporal(stack, kt, k)
    lap = laplacian(stack[k], k2)
    return _guard(k, dT, lap, cfg.eps_factor, cfg.eps_den, cfg.ratio_clamp)


def _frame_from_prepared(p: _Prepared, quantile, region=None) -> FrameEstimate:
    if region is None:
        region = (slice(None), slice(None))
    sel = p.survivors[region]
    if not sel.any():
        raise EstimationError(
            f"frame {p.index}: no pixel survived masking",
            {
                "valid": int(p.valid.sum()),
                "after_denominator_guard": int(p.valid.sum()) - p.masked_denominator,
                "after_ratio_clamp": int(p.survivors.sum()),
            },
        )
    a, mass, kept, degenerate, clamped = _attend(p.rate[region][sel], p.ratio[region][sel], quantile)
    if degenerate:
        log.debug("frame %d: uniform RTC, using unweighted mean", p.index)
    return FrameEstimate(
        p.index, a, mass, p.masked_denominator, p.masked_ratio,
        int(p.valid.sum()), kept, degenerate, clamped,
    )


def estimate_frame(stack: FrameStack, k: int, cfg: EstimatorConfig = EstimatorConfig()) -> FrameEstimate:
    """ANRA estimate of the diffusivity from frame ``k`` (and its history)."""
    return _frame_from_prepared(_prepare(stack, k, cfg), cfg.quantile)


def aggregate(per_frame: Sequence[FrameEstimate], how: str = "mass") -> float:
    a = np.array([f.a_hat for f in per_frame])
    if how == "mean":
        return float(a.mean())
    m = np.array([f.retained_mass for f in per_frame])
    return float(np.dot(m, a) / m.sum())


def _run_sequence(stack, first, frame_fn, method, aggregation, config) -> EstimateReport:
    if first >= len(stack):
        raise HistoryError(f"stack of {len(stack)} frames has no admissible frame (need at least {first + 1})")
    per_frame, skipped = [], []
    for k in range(first, len(stack)):
        try:
            per_frame.append(frame_fn(k))
        except EstimationError as exc:
            skipped.append((k, exc.counts))
    if not per_frame:
        raise EstimationError(f"{method}: every admissible frame was fully masked", skipped[-1][1] if skipped else {})
    report = EstimateReport(aggregate(per_frame, aggregation), per_frame, method, aggregation, skipped, config)
    if not report.feasible:
        log.warning("%s estimate a_hat=%.4g is not physically feasible (<= 0)", method, report.a_hat)
    return report


def estimate_sequence(stack: FrameStack, cfg: EstimatorConfig = EstimatorConfig()) -> EstimateReport:
    """Run :func:`estimate_frame` on every admissible frame and pool the results."""
    kt, _ = cfg.kernels()
    return _run_sequence(
        stack, kt.history, lambda k: estimate_frame(stack, k, cfg), ANRA, cfg.aggregation, asdict(cfg)
    )


# --- windowed ---------------------------------------------------------------


def _bbox(mask: np.ndarray):
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return rows[0], rows[-1] + 1, cols[0], cols[-1] + 1


def estimate_windowed(
    stack: FrameStack,
    window=(32, 32, 8),
    cfg: EstimatorConfig = EstimatorConfig(),
    frames: Optional[Sequence[int]] = None,
) -> DiffusivityField:
    """Diffusivity map from ANRA averages over sliding windows.

    Each placement's estimate is written to the ``stride x stride`` block
    around the window centre.  Frames (all admissible ones by default) are
    pooled per window with ``cfg.aggregation``.
    """
    h, w, stride = (int(v) for v in window)
    if h < 1 or w < 1 or stride < 1:
        raise ParameterError(f"window must be positive, got {window}")
    kt, _ = cfg.kernels()
    if frames is None:
        frames = range(kt.history, len(stack))
    prepared = [_prepare(stack, k, cfg) for k in frames]
    if not prepared:
        raise HistoryError("no admissible frame for the windowed estimate")
    valid = np.logical_or.reduce([p.valid for p in prepared])
    if not valid.any():
        raise DimensionError("derivative valid region is empty")
    r0, r1, c0, c1 = _bbox(valid)
    if h > r1 - r0 or w > c1 - c0:
        raise DimensionError(f"window {h}x{w} exceeds the valid region {r1 - r0}x{c1 - c0}")

    grid = stack.grid
    out = np.full(grid.shape, np.nan)
    out_mask = np.zeros(grid.shape, dtype=bool)
    half = stride // 2
    for top in range(r0, r1 - h + 1, stride):
        for left in range(c0, c1 - w + 1, stride):
            region = (slice(top, top + h), slice(left, left + w))
            ests = []
            for p in prepared:
                try:
                    ests.append(_frame_from_prepared(p, cfg.quantile, region))
                except EstimationError:
                    continue
            if not ests:
                continue
            a = aggregate(ests, cfg.aggregation)
            if not np.isfinite(a):
                continue
            ci, cj = top + h // 2, left + w // 2
            rs = slice(max(ci - half, 0), min(ci - half + stride, grid.height))
            cs = slice(max(cj - half, 0), min(cj - half + stride, grid.width))
            out[rs, cs] = a
            out_mask[rs, cs] = True
    return DiffusivityField(ScalarField(grid, out, out_mask), (h, w, stride))


# --- baselines --------------------------------------------------------------


def estimate_baseline(
    stack: FrameStack, k: int, variant: str = BACKWARD_LOG, cfg: BaselineConfig = BaselineConfig()
) -> FrameEstimate:
    """Unweighted ratio mean with the non-robust kernels (no RTC, no cut)."""
    if variant not in BASELINES:
        raise ParameterError(f"unknown baseline {variant!r}; expected one of {BASELINES}")
    dT = apply_temporal(stack, make_baseline_backward_diff(), k)
    frame = stack[k]
    if variant == BACKWARD_LOG_SMOOTH:
        frame = apply_2d(frame, make_baseline_gaussian(cfg.smooth_sigma, cfg.smooth_radius))
    lap = apply_2d(frame, make_baseline_log(cfg.log_sigma, cfg.log_radius))
    p = _guard(k, dT, lap, cfg.eps_factor, None, cfg.ratio_clamp)
    sel = p.survivors
    if not sel.any():
        raise EstimationError(f"frame {k}: no pixel survived masking", {"valid": int(p.valid.sum())})
    a = float(np.mean(p.ratio[sel]))
    n = int(sel.sum())
    return FrameEstimate(k, a, 1.0, p.masked_denominator, p.masked_ratio, int(p.valid.sum()), n)


def baseline_sequence(
    stack: FrameStack, variant: str = BACKWARD_LOG, cfg: BaselineConfig = BaselineConfig()
) -> EstimateReport:
    return _run_sequence(
        stack, 1, lambda k: estimate_baseline(stack, k, variant, cfg), variant, cfg.aggregation, asdict(cfg)
    )
