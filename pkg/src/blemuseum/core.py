"""Shared domain types for the beacon positioning pipeline.

All types are frozen dataclasses that validate themselves on construction,
so any value that exists satisfies its invariants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

BeaconId = str

RSSI_MIN_DBM = -120.0
RSSI_MAX_DBM = 0.0
ADV_INTERVAL_RANGE_MS = (100, 10_000)
TX_POWER_RANGE_DBM = (-23.0, 0.0)


class ValidationError(ValueError):
    """Invalid domain value. ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


def _check_id(value: object, path: str) -> None:
    if not isinstance(value, str) or not value:
        raise ValidationError(path, "beacon id must be a non-empty string")
    if any(ord(c) < 32 or ord(c) == 127 for c in value):
        raise ValidationError(path, "beacon id must not contain control characters")


def check_beacon_id(value: object, path: str = "beacon") -> None:
    _check_id(value, path)


def _check_finite(value: float, path: str) -> None:
    ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    try:
        ok = ok and math.isfinite(value)
    except OverflowError:
        ok = False
    if not ok:
        raise ValidationError(path, f"must be a finite number, got {value!r}")


@dataclass(frozen=True)
class RssiSample:
    beacon: BeaconId
    timestamp: int  # ms since epoch
    rssi: float  # dBm

    def __post_init__(self):
        _check_id(self.beacon, "beacon")
        if isinstance(self.timestamp, bool) or not isinstance(self.timestamp, int) or self.timestamp < 0:
            raise ValidationError("timestamp", f"must be a non-negative integer, got {self.timestamp!r}")
        _check_finite(self.rssi, "rssi")
        if not RSSI_MIN_DBM <= self.rssi <= RSSI_MAX_DBM:
            raise ValidationError("rssi", f"{self.rssi} dBm outside [{RSSI_MIN_DBM}, {RSSI_MAX_DBM}]")


@dataclass(frozen=True)
class PathLossModel:
    """Log-distance path loss parameters for one environment."""

    n: float
    rssi0: float
    d0: float = 1.0
    sigma: float = 0.0

    def __post_init__(self):
        for name in ("n", "rssi0", "d0", "sigma"):
            _check_finite(getattr(self, name), name)
        if self.n <= 0:
            raise ValidationError("n", "path-loss exponent must be > 0")
        if self.d0 <= 0:
            raise ValidationError("d0", "reference distance must be > 0")
        if self.sigma < 0:
            raise ValidationError("sigma", "shadowing deviation must be >= 0")


@dataclass(frozen=True)
class Position2D:
    x: float
    y: float

    def __post_init__(self):
        _check_finite(self.x, "x")
        _check_finite(self.y, "y")

    def distance_to(self, other: Position2D) -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class BeaconPlacement:
    beacon: BeaconId
    x: float
    y: float
    adv_interval: int = 100  # ms
    tx_power: float = 0.0  # dBm

    def __post_init__(self):
        _check_placement(self, "")

    @property
    def position(self) -> Position2D:
        return Position2D(self.x, self.y)


def _check_placement(p: BeaconPlacement, prefix: str) -> None:
    _check_id(p.beacon, prefix + "beacon")
    _check_finite(p.x, prefix + "x")
    _check_finite(p.y, prefix + "y")
    lo, hi = ADV_INTERVAL_RANGE_MS
    if isinstance(p.adv_interval, bool) or not isinstance(p.adv_interval, int) or not lo <= p.adv_interval <= hi:
        raise ValidationError(prefix + "adv_interval", f"{p.adv_interval!r} ms out of range [{lo}, {hi}]")
    _check_finite(p.tx_power, prefix + "tx_power")
    lo, hi = TX_POWER_RANGE_DBM
    if not lo <= p.tx_power <= hi:
        raise ValidationError(prefix + "tx_power", f"{p.tx_power!r} dBm out of range [{lo}, {hi}]")


@dataclass(frozen=True)
class BeaconMap:
    beacons: tuple[BeaconPlacement, ...]
    environment: PathLossModel

    def __post_init__(self):
        object.__setattr__(self, "beacons", tuple(self.beacons))
        validate_beacon_map(self)

    def __getitem__(self, beacon: BeaconId) -> BeaconPlacement:
        for p in self.beacons:
            if p.beacon == beacon:
                return p
        raise KeyError(beacon)

    def __contains__(self, beacon: object) -> bool:
        return any(p.beacon == beacon for p in self.beacons)

    @property
    def ids(self) -> list[BeaconId]:
        return [p.beacon for p in self.beacons]


def validate_beacon_map(beacon_map: BeaconMap) -> BeaconMap:
    """Check every invariant of ``beacon_map`` and return it unchanged."""
    if not beacon_map.beacons:
        raise ValidationError("beacons", "empty beacon list")
    if not isinstance(beacon_map.environment, PathLossModel):
        raise ValidationError("environment", "must be a PathLossModel")
    seen: set[str] = set()
    for i, p in enumerate(beacon_map.beacons):
        _check_placement(p, f"beacons[{i}].")
        if p.beacon in seen:
            raise ValidationError(f"beacons[{i}].beacon", f"duplicate id {p.beacon!r}")
        seen.add(p.beacon)
    return beacon_map


@dataclass(frozen=True)
class PositionFix:
    position: Position2D
    residual: float  # m
    source_beacons: tuple[BeaconId, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "source_beacons", tuple(self.source_beacons))
        _check_finite(self.residual, "residual")
        if self.residual < 0:
            raise ValidationError("residual", "must be >= 0")
        if len(self.source_beacons) < 3:
            raise ValidationError("source_beacons", "a fix needs at least 3 beacons")
        if len(set(self.source_beacons)) != len(self.source_beacons):
            raise ValidationError("source_beacons", "beacons must be distinct")


def check_sorted(samples: Sequence[RssiSample]) -> None:
    """Raise if timestamps decrease for any single beacon."""
    last: dict[str, int] = {}
    for i, s in enumerate(samples):
        prev = last.get(s.beacon)
        if prev is not None and s.timestamp < prev:
            raise ValidationError(f"[{i}].timestamp", f"timestamp {s.timestamp} precedes {prev} for beacon {s.beacon!r}")
        last[s.beacon] = s.timestamp
