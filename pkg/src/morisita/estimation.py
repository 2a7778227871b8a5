"""Morisita estimator of intrinsic dimension.

The estimator regresses the log Morisita index on the log grid resolution
and turns the slope into a dimension: ``id = E - slope / (m - 1)``.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .counting import (
    ScaleSet,
    counts_from_keys,
    grid_keys,
    log_morisita,
    max_valid_scale,
)

logger = logging.getLogger(__name__)

R2_WARN = 0.95
AUTO_INTEGER_BELOW = 30
AUTO_MIN_PAIRS = 20
DEFAULT_CAP = 4096


class InfeasibleError(ValueError):
    """The data cannot support a slope fit (too few valid scales)."""


@dataclass(frozen=True)
class MorisitaCurve:
    scales: tuple[int, ...]  # scales kept in the fit
    log_inv_ell: np.ndarray
    log_index: np.ndarray
    dropped_scales: tuple[int, ...]
    dim: int
    n_points: int


@dataclass(frozen=True)
class IDEstimate:
    slope: float
    intercept: float
    r_squared: float
    id_value: float
    m_order: int
    dim: int
    scales_used: tuple[int, ...]
    dropped_scales: tuple[int, ...] = ()
    warnings: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "id": self.id_value,
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r_squared,
            "m_order": self.m_order,
            "dim": self.dim,
            "scales": list(self.scales_used),
            "dropped": list(self.dropped_scales),
            "warnings": list(self.warnings),
        }


def _as_array(m) -> np.ndarray:
    x = np.asarray(getattr(m, "values", m), dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def curve_from_keys(keys_per_scale, scales, n_points: int, dim: int, m_order: int = 2):
    """Build a curve from packed ``(keys, radix)`` pairs, one per scale."""
    kept, xs, ys, dropped = [], [], [], []
    for scale, (keys, radix) in zip(scales, keys_per_scale):
        value, valid = log_morisita(counts_from_keys(keys, radix), n_points, dim, scale, m_order)
        if valid:
            kept.append(scale)
            xs.append(math.log(scale))
            ys.append(value)
        else:
            dropped.append(scale)
    return MorisitaCurve(tuple(kept), np.array(xs), np.array(ys), tuple(dropped), dim, n_points)


def compute_curve(m, scales: ScaleSet, m_order: int = 2, *, strict: bool = True) -> MorisitaCurve:
    """Log-log Morisita curve over ``scales``.

    Scales where no cell holds ``m_order`` points are listed in
    ``dropped_scales``. Raises :class:`InfeasibleError` if fewer than two
    scales remain and ``strict`` is set.
    """
    x = _as_array(m)
    n, dim = x.shape
    if n < 2:
        raise ValueError("need at least 2 points")
    keys = [grid_keys(x, s) for s in scales]
    curve = curve_from_keys(keys, scales, n, dim, m_order)
    if strict and len(curve.scales) < 2:
        raise InfeasibleError(
            f"only {len(curve.scales)} valid scale(s) out of {len(scales)}: no grid cell "
            "holds two points at the finer scales; N is too small relative to E"
        )
    return curve


def fit_slope(curve: MorisitaCurve) -> tuple[float, float, float]:
    """Ordinary least squares of log index on log resolution.

    Returns ``(slope, intercept, r_squared)``. R^2 is 1 when the responses
    have no spread.
    """
    x, y = curve.log_inv_ell, curve.log_index
    if len(x) < 2:
        raise InfeasibleError("at least two curve points are needed for a fit")
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    slope = float(np.dot(dx, y - ym) / np.dot(dx, dx))
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    ss_tot = float(np.dot(y - ym, y - ym))
    ss_res = float(np.dot(resid, resid))
    if ss_tot == 0.0:
        r2 = 1.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return slope, intercept, r2


def id_from_slope(dim: int, slope: float, m_order: int = 2) -> float:
    return dim - slope / (m_order - 1)


def estimate_from_curve(curve: MorisitaCurve, m_order: int = 2) -> IDEstimate:
    slope, intercept, r2 = fit_slope(curve)
    notes = []
    if r2 < R2_WARN:
        notes.append(f"log-log curve is not linear (R^2={r2:.3f} < {R2_WARN})")
    value = id_from_slope(curve.dim, slope, m_order)
    if not -0.1 <= value <= curve.dim + 0.1:
        notes.append(f"estimate {value:.3f} outside [0, {curve.dim}]")
    return IDEstimate(
        slope, intercept, r2, value, m_order, curve.dim,
        curve.scales, curve.dropped_scales, tuple(notes),
    )


def estimate_id(m, scales: ScaleSet, m_order: int = 2) -> IDEstimate:
    """Morisita intrinsic dimension of rescaled data ``m``."""
    return estimate_from_curve(compute_curve(m, scales, m_order), m_order)


def suggest_scales(m, ratio: int = 1, max_cap: int = DEFAULT_CAP, min_pairs: int = 1) -> ScaleSet:
    """Scales from 1 up to the largest resolution with a shared cell.

    With ``ratio=1`` and an upper bound below 30 every integer is used;
    otherwise powers of two. ``min_pairs`` raises the support required at
    the finest scale (see :func:`max_valid_scale`).
    """
    if ratio not in (1, 2):
        raise ValueError("ratio must be 1 or 2")
    bound = max_valid_scale(m, max_cap, min_pairs)
    if bound < 2:
        raise InfeasibleError(
            "ID not computable; N too small relative to E "
            "(no grid cell holds two points beyond a single cell)"
        )
    if ratio == 1 and bound < AUTO_INTEGER_BELOW:
        return ScaleSet(tuple(range(1, bound + 1)))
    return ScaleSet.geometric(bound, 2)


def auto_scales(m, max_cap: int = DEFAULT_CAP, min_pairs: int = AUTO_MIN_PAIRS) -> ScaleSet:
    """Default scale set: integers below 30, powers of two above.

    The finest scale must hold at least ``min_pairs`` same-cell pairs; at
    the bare one-pair limit the index rests on a handful of coincidences
    and the top of the log-log curve is dominated by noise.
    """
    return suggest_scales(m, 1, max_cap, min_pairs)


def write_curve_csv(path, m, scales: ScaleSet, m_order: int = 2) -> MorisitaCurve:
    """Write (scale, log_inv_ell, log_index, valid) rows for every scale."""
    curve = compute_curve(m, scales, m_order, strict=False)
    lookup = dict(zip(curve.scales, curve.log_index.tolist()))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scale", "log_inv_ell", "log_index", "valid"])
        for s in scales:
            valid = s in lookup
            w.writerow([s, repr(math.log(s)), repr(lookup[s]) if valid else "", int(valid)])
    return curve
