"""Log-distance path loss: prediction, inversion and calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import PathLossModel, ValidationError


@dataclass(frozen=True)
class CalibrationPoint:
    distance: float  # m
    rssi: float  # dBm

    def __post_init__(self):
        if not math.isfinite(self.distance) or self.distance <= 0:
            raise ValidationError("distance", f"must be > 0, got {self.distance!r}")
        if not math.isfinite(self.rssi):
            raise ValidationError("rssi", f"must be finite, got {self.rssi!r}")


@dataclass(frozen=True)
class FitResult:
    model: PathLossModel
    rmse: float  # dB
    point_count: int


class RankDeficientError(ValueError):
    pass


def predict_rssi(model: PathLossModel, distance: float) -> float:
    """Mean RSSI in dBm at ``distance`` metres."""
    if not distance > 0:
        raise ValueError(f"distance must be > 0, got {distance!r}")
    return model.rssi0 - 10.0 * model.n * math.log10(distance / model.d0)


def distance_noiseless(model: PathLossModel, rssi: float) -> float:
    return model.d0 * 10.0 ** ((model.rssi0 - rssi) / (10.0 * model.n))


def shrinkage_factor(model: PathLossModel) -> float:
    """Multiplicative bias correction for log-normal shadowing; 1 when sigma is 0."""
    s = model.sigma * math.log(10.0) / (10.0 * model.n)
    return math.exp(-0.5 * s * s)


def distance_noise_corrected(model: PathLossModel, rssi: float) -> float:
    """Distance estimate that compensates for the mean bias of shadowed RSSI.

    Inverting a noisy reading directly overestimates the distance on
    average, by ``exp(s**2 / 2)`` with ``s = sigma*ln(10)/(10n)``.
    """
    return distance_noiseless(model, rssi) * shrinkage_factor(model)


def fit_path_loss(points: Iterable[CalibrationPoint], d0: float = 1.0) -> FitResult:
    """Least-squares fit of ``rssi = rssi0 - 10 n log10(d/d0)``.

    Every point enters the regression on its own, so repeated readings at
    one distance keep their spread in the residuals. ``sigma`` is the
    sample standard deviation of those residuals (two fitted parameters).
    """
    pts = list(points)
    if not d0 > 0:
        raise ValueError("d0 must be > 0")
    if len(pts) < 2 or len({p.distance for p in pts}) < 2:
        raise RankDeficientError("need at least 2 distinct distances to fit a path loss model")

    x = np.log10(np.array([p.distance for p in pts]) / d0)
    y = np.array([p.rssi for p in pts])
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    slope = float(np.dot(dx, y - ym) / np.dot(dx, dx))
    intercept = float(ym - slope * xm)
    n = -slope / 10.0
    if not n > 0:
        raise ValueError(f"fitted path-loss exponent {n:.4g} is not positive; RSSI must fall with distance")

    resid = y - (intercept + slope * x)
    rmse = float(math.sqrt(np.mean(resid**2)))
    dof = len(pts) - 2
    sigma = float(math.sqrt(np.sum(resid**2) / dof)) if dof > 0 else 0.0
    model = PathLossModel(n=n, rssi0=intercept, d0=d0, sigma=sigma)
    return FitResult(model=model, rmse=rmse, point_count=len(pts))
