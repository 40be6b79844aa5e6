"""Prediction error, deviation fields and kernel density estimates of estimate errors."""

from __future__ import annotations

from dataclasses import dataclass
from math import erf, sqrt

import numpy as np

from .errors import ParameterError
from .field import FrameStack, ScalarField, subtract
from .simulator import predict

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class PredictionError:
    raw: float
    normalized: float
    frames: int
    pixels: int


def prediction_error_report(observed: FrameStack, a_hat, boundary: str = "insulated",
                            frames: int | None = None) -> PredictionError:
    """Sum over frames of ``||observed[k] - predicted(k dt)||^2``.

    The prediction starts from ``observed[0]``.  ``normalized`` divides by the
    number of (frame, pixel) terms that entered the sum.
    """
    if len(observed) < 1:
        raise ParameterError("observed stack is empty")
    n = len(observed) if frames is None else int(frames)
    if not 1 <= n <= len(observed):
        raise ParameterError(f"frames must lie in 1..{len(observed)}")
    pred = predict(observed[0], a_hat, (n - 1) * observed.grid.dt, observed.grid, boundary)
    common = observed.mask[:n] & pred.mask
    diff = np.where(common, observed.values[:n] - pred.values, 0.0)
    raw = float(np.sum(diff * diff))
    terms = int(common.sum())
    return PredictionError(raw, raw / terms if terms else 0.0, n, terms)


def prediction_error(observed: FrameStack, a_hat, normalized: bool = False, boundary: str = "insulated") -> float:
    r = prediction_error_report(observed, a_hat, boundary)
    return r.normalized if normalized else r.raw


def deviation_field(observed_at_t: ScalarField, predicted_at_t: ScalarField) -> ScalarField:
    return subtract(observed_at_t, predicted_at_t)


def silverman_bandwidth(samples) -> float:
    """``0.9 * min(std, IQR / 1.34) * n^(-1/5)``, falling back when the spread is zero."""
    x = np.asarray(samples, dtype=np.float64)
    std = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(std, (q75 - q25) / 1.34)
    if spread <= 0:
        spread = std
    if spread <= 0:
        # identical samples: any positive width integrates to 1
        spread = 1e-3 * max(1.0, float(np.max(np.abs(x))))
    return 0.9 * spread * x.size ** (-0.2)


@dataclass(frozen=True)
class KdeCurve:
    support: np.ndarray
    density: np.ndarray
    bandwidth: float
    samples: np.ndarray

    def integral(self) -> float:
        return float(_trapezoid(self.density, self.support))

    def mass_between(self, lo: float, hi: float) -> float:
        """Exact probability mass of the Gaussian mixture on ``[lo, hi]``."""
        s = self.bandwidth * sqrt(2.0)
        cdf = np.vectorize(lambda z: 0.5 * (1 + erf(z)))
        return float(np.mean(cdf((hi - self.samples) / s) - cdf((lo - self.samples) / s)))

    def to_csv(self) -> str:
        rows = ["deviation,density"]
        rows += [f"{x:.10g},{y:.10g}" for x, y in zip(self.support, self.density)]
        return "\n".join(rows) + "\n"


def deviation_kde(per_frame_estimates, a_true: float, bandwidth="auto",
                  points: int = 512, span: float = 4.0) -> KdeCurve:
    """Gaussian KDE of ``a_hat[k] - a_true`` on ``points`` abscissae.

    The support covers the sample range padded by ``span`` bandwidths.  The
    automatic bandwidth is floored at ``range / 64`` so the kernels stay
    resolved on the fixed grid when most samples coincide.
    """
    dev = np.asarray(per_frame_estimates, dtype=np.float64) - float(a_true)
    if dev.size < 2:
        raise ParameterError("deviation_kde needs at least 2 samples")
    if not np.all(np.isfinite(dev)):
        raise ParameterError("estimates must be finite")
    if bandwidth in (None, "auto", "silverman"):
        bw = max(silverman_bandwidth(dev), float(np.ptp(dev)) / 64)
    else:
        bw = float(bandwidth)
        if not bw > 0:
            raise ParameterError("bandwidth must be positive")
    x = np.linspace(dev.min() - span * bw, dev.max() + span * bw, points)
    z = (x[:, None] - dev[None, :]) / bw
    dens = np.exp(-0.5 * z * z).sum(axis=1) / (dev.size * bw * sqrt(2 * np.pi))
    return KdeCurve(x, dens, bw, np.sort(dev))
