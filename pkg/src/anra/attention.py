"""Rate-of-thermal-change (RTC) attention weights and the confidence cut."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAttentionError, EmptyFieldError, ParameterError
from .field import ScalarField

EXP_CLAMP = 700.0


@dataclass(frozen=True)
class RtcField:
    """Attention weights on the unmasked pixels of ``weights``.

    ``retained_mass`` is the share of the full-field weight kept by the last
    confidence cut (1.0 before any cut); ``clamped`` counts pixels whose
    ``|dT/dt|`` hit the exponent guard.
    """

    weights: ScalarField
    retained_mass: float = 1.0
    clamped: int = 0

    @property
    def kept(self) -> np.ndarray:
        return self.weights.mask


def rtc_weights(abs_rate: np.ndarray) -> np.ndarray:
    """exp, subtract the minimum, normalise; operates on a flat vector of ``|dT/dt|``.

    Raises :class:`DegenerateAttentionError` when nothing is left after the
    minimum is removed.
    """
    if abs_rate.size == 0:
        raise EmptyFieldError("no unmasked pixels to attend to")
    e = np.exp(np.minimum(abs_rate, EXP_CLAMP))
    e -= e.min()
    total = e.sum()
    if not total > 0:
        raise DegenerateAttentionError("uniform rate of thermal change: weights vanish after min-subtraction")
    return e / total


def compute_rtc(dTdt: ScalarField) -> RtcField:
    mask = dTdt.mask
    rate = np.abs(dTdt.values[mask])
    clamped = int(np.count_nonzero(rate > EXP_CLAMP))
    w = np.zeros(dTdt.shape)
    w[mask] = rtc_weights(rate)
    return RtcField(ScalarField(dTdt.grid, w, mask), 1.0, clamped)


def quantile_keep(weights: np.ndarray, quantile: float) -> np.ndarray:
    """Boolean keep-vector for ``weights >= quantile(weights)`` (ties kept).

    The threshold is the sample at or below the requested quantile, so small
    quantiles keep every pixel.
    """
    if not 0.0 < quantile < 1.0:
        raise ParameterError(f"quantile must lie in (0, 1), got {quantile!r}")
    return weights >= np.quantile(weights, quantile, method="lower")


def confidence_mask(rtc: RtcField, quantile: float = 0.5) -> RtcField:
    """Keep the pixels at or above the weight quantile and renormalise over them.

    The returned field's mask is the confidence mask; its ``retained_mass`` is
    the summed weight of the kept pixels before renormalisation.
    """
    mask = rtc.weights.mask
    w = rtc.weights.values[mask]
    if w.size == 0:
        raise EmptyFieldError("no unmasked pixels to threshold")
    keep = quantile_keep(w, quantile)
    mass = float(w[keep].sum())
    new_mask = np.zeros(rtc.weights.shape, dtype=bool)
    new_mask[mask] = keep
    out = np.zeros(rtc.weights.shape)
    out[new_mask] = w[keep] / mass
    return RtcField(ScalarField(rtc.weights.grid, out, new_mask), mass, rtc.clamped)
