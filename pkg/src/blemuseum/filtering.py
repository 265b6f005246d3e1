"""Scalar Kalman filtering of per-beacon RSSI streams.

The state is the beacon's mean RSSI, modelled as a random walk: identity
transition plus process noise ``q`` each step, observed with noise ``r``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

from .core import PathLossModel, RssiSample, ValidationError
from .pathloss import FitResult

MIN_MEASUREMENT_NOISE = 0.01  # dB^2


@dataclass(frozen=True)
class KalmanParams:
    process_noise_q: float
    measurement_noise_r: float
    # None seeds the filter with the first measurement it sees.
    initial_estimate: Optional[float] = None
    initial_variance: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.process_noise_q) or self.process_noise_q < 0:
            raise ValidationError("process_noise_q", "must be >= 0")
        if not math.isfinite(self.measurement_noise_r) or self.measurement_noise_r <= 0:
            raise ValidationError("measurement_noise_r", "must be > 0")
        if not math.isfinite(self.initial_variance) or self.initial_variance <= 0:
            raise ValidationError("initial_variance", "must be > 0")
        if self.initial_estimate is not None and not math.isfinite(self.initial_estimate):
            raise ValidationError("initial_estimate", "must be finite")


@dataclass(frozen=True)
class KalmanState:
    estimate: float
    variance: float
    steps: int = 0


class KalmanDefaults(NamedTuple):
    params: KalmanParams
    degenerate: bool


def kalman_init(params: KalmanParams, first_measurement: Optional[float] = None) -> KalmanState:
    estimate = params.initial_estimate if params.initial_estimate is not None else first_measurement
    if estimate is None:
        raise ValueError("initial_estimate is unset; pass the first measurement")
    return KalmanState(estimate=float(estimate), variance=params.initial_variance, steps=0)


def kalman_update(state: KalmanState, measurement: float, params: KalmanParams) -> KalmanState:
    if not math.isfinite(measurement):
        raise ValueError(f"measurement must be finite, got {measurement!r}")
    prior_var = state.variance + params.process_noise_q
    gain = prior_var / (prior_var + params.measurement_noise_r)
    estimate = state.estimate + gain * (measurement - state.estimate)
    variance = (1.0 - gain) * prior_var
    return KalmanState(estimate=estimate, variance=variance, steps=state.steps + 1)


def filter_trace(params: KalmanParams, samples: Sequence[RssiSample]) -> list[tuple[int, float]]:
    """Run one filter over a single-beacon trace.

    Returns ``(timestamp, estimate)`` after each sample.
    """
    if not samples:
        return []
    beacon = samples[0].beacon
    for i, s in enumerate(samples):
        if s.beacon != beacon:
            raise ValueError(f"sample {i} is from beacon {s.beacon!r}, trace is for {beacon!r}")
        if i and s.timestamp < samples[i - 1].timestamp:
            raise ValueError(f"sample {i} is out of order ({s.timestamp} < {samples[i - 1].timestamp})")

    state = kalman_init(params, samples[0].rssi)
    out = []
    for s in samples:
        state = kalman_update(state, s.rssi, params)
        out.append((s.timestamp, state.estimate))
    return out


def params_for_sigma(sigma: float) -> KalmanDefaults:
    """Default tuning from a shadowing deviation: r = sigma^2, q = r/100."""
    r = sigma * sigma
    degenerate = r < MIN_MEASUREMENT_NOISE
    if degenerate:
        warnings.warn(
            f"shadowing sigma {sigma:.3g} dB is degenerate; measurement noise floored at {MIN_MEASUREMENT_NOISE} dB^2",
            stacklevel=3,
        )
        r = MIN_MEASUREMENT_NOISE
    params = KalmanParams(process_noise_q=r / 100.0, measurement_noise_r=r, initial_estimate=None, initial_variance=r)
    return KalmanDefaults(params, degenerate)


def default_params_from_fit(fit: FitResult) -> KalmanDefaults:
    return params_for_sigma(fit.model.sigma)


def params_for_model(model: PathLossModel) -> KalmanParams:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return params_for_sigma(model.sigma).params

