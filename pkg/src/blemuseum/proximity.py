"""Per-visitor proximity sessions.

Each beacon's RSSI is Kalman filtered, converted to a distance and binned
into a zone. Zone transitions drive Enter/Exit/Notification events, and the
strongest in-range beacon is tracked as the visitor's nearest exhibit.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import BeaconId, BeaconMap, RssiSample, ValidationError, check_beacon_id
from .filtering import KalmanParams, KalmanState, filter_trace, kalman_init, kalman_update, params_for_model, params_for_sigma
from .pathloss import distance_noise_corrected

LOSS_TIMEOUT_INTERVALS = 3
DEFAULT_WINDOW_MS = 1000


class Zone(IntEnum):
    IMMEDIATE = 0
    NEAR = 1
    FAR = 2
    OUT_OF_RANGE = 3


class EventKind(str, Enum):
    ENTER = "enter"
    EXIT = "exit"
    NEAREST_CHANGED = "nearest_changed"
    NOTIFICATION = "notification"


class Reducer(str, Enum):
    KALMAN = "kalman"
    MEAN = "mean"
    LAST = "last"


@dataclass(frozen=True)
class ZoneThresholds:
    immediate_max: float = 0.5  # m
    near_max: float = 4.0
    range_max: float = 10.0

    def __post_init__(self):
        if not 0 < self.immediate_max < self.near_max < self.range_max:
            raise ValidationError("thresholds", "need 0 < immediate_max < near_max < range_max")


@dataclass(frozen=True)
class ProximityEvent:
    kind: EventKind
    beacon: BeaconId
    zone: Zone
    timestamp: int  # ms
    dwell: Optional[int] = None  # ms, Exit only

    def __post_init__(self):
        object.__setattr__(self, "kind", EventKind(self.kind))
        object.__setattr__(self, "zone", Zone(self.zone))
        check_beacon_id(self.beacon)
        if isinstance(self.timestamp, bool) or not isinstance(self.timestamp, int) or self.timestamp < 0:
            raise ValidationError("timestamp", "must be a non-negative integer")
        if self.kind is EventKind.EXIT:
            if isinstance(self.dwell, bool) or not isinstance(self.dwell, int) or self.dwell < 0:
                raise ValidationError("dwell", "exit events need an integer dwell >= 0")
        elif self.dwell is not None:
            raise ValidationError("dwell", f"only exit events carry a dwell, not {self.kind.value}")


@dataclass(frozen=True)
class SessionState:
    filters: Mapping[BeaconId, KalmanState] = field(default_factory=dict)
    zones: Mapping[BeaconId, Zone] = field(default_factory=dict)
    nearest: Optional[BeaconId] = None
    entered: Mapping[BeaconId, int] = field(default_factory=dict)
    last_seen: Mapping[BeaconId, int] = field(default_factory=dict)
    # Watermark: the latest `now` consumed. Later samples may not precede it.
    clock: int = 0


def classify_zone(distance: float, thresholds: ZoneThresholds = ZoneThresholds()) -> Zone:
    if not distance >= 0:
        raise ValueError(f"distance must be >= 0, got {distance!r}")
    if distance <= thresholds.immediate_max:
        return Zone.IMMEDIATE
    if distance <= thresholds.near_max:
        return Zone.NEAR
    if distance <= thresholds.range_max:
        return Zone.FAR
    return Zone.OUT_OF_RANGE


def nearest_beacon(snapshot: Mapping[BeaconId, float]) -> Optional[BeaconId]:
    """Strongest beacon in the snapshot; ties go to the smallest id."""
    if not snapshot:
        return None
    return min(snapshot, key=lambda b: (-snapshot[b], b))


def snapshot(
    samples: Iterable[RssiSample],
    window: int,
    now: int,
    reducer: Reducer | str = Reducer.KALMAN,
    kalman: Optional[KalmanParams] = None,
) -> dict[BeaconId, float]:
    """Aggregate RSSI per beacon over the window ``(now - window, now]``.

    The kalman reducer seeds a fresh filter with the window's first reading;
    without explicit params it assumes 2 dB shadowing.
    """
    if window <= 0:
        raise ValueError("window must be > 0")
    reducer = Reducer(reducer)
    per_beacon: dict[str, list[RssiSample]] = defaultdict(list)
    for s in samples:
        if now - window < s.timestamp <= now:
            per_beacon[s.beacon].append(s)

    out = {}
    for beacon, group in per_beacon.items():
        group.sort(key=lambda s: s.timestamp)
        if reducer is Reducer.LAST:
            out[beacon] = group[-1].rssi
        elif reducer is Reducer.MEAN:
            out[beacon] = float(np.mean([s.rssi for s in group]))
        else:
            params = kalman or params_for_sigma(2.0).params
            out[beacon] = filter_trace(params, group)[-1][1]
    return out


def update_session(
    state: SessionState,
    samples: Sequence[RssiSample],
    now: int,
    beacon_map: BeaconMap,
    thresholds: ZoneThresholds = ZoneThresholds(),
    kalman: Optional[KalmanParams] = None,
) -> tuple[SessionState, list[ProximityEvent]]:
    """Consume one batch of readings up to ``now``.

    A beacon that goes unheard for more than three advertising intervals is
    considered lost; its Exit is stamped at the moment the timeout elapsed
    rather than when it was noticed. Readings from beacons missing from the
    map are ignored.
    """
    batch = sorted(samples, key=lambda s: s.timestamp)
    if now < state.clock:
        raise ValueError(f"now={now} precedes the session clock {state.clock}")
    if batch:
        if batch[0].timestamp < state.clock:
            raise ValueError(f"out-of-order batch: sample at {batch[0].timestamp} precedes session clock {state.clock}")
        if batch[-1].timestamp > now:
            raise ValueError(f"sample at {batch[-1].timestamp} is later than now={now}")

    params = kalman or params_for_model(beacon_map.environment)
    env = beacon_map.environment
    filters = dict(state.filters)
    zones = dict(state.zones)
    entered = dict(state.entered)
    last_seen = dict(state.last_seen)
    nearest = state.nearest
    events: list[ProximityEvent] = []

    def expire(t: int) -> None:
        lost = []
        for b in list(filters):
            timeout = LOSS_TIMEOUT_INTERVALS * beacon_map[b].adv_interval
            if t - last_seen[b] <= timeout:
                continue
            if zones[b] is Zone.OUT_OF_RANGE:
                del filters[b]  # stale; no event for a beacon that never counted as present
            else:
                lost.append((last_seen[b] + timeout, b))
        for deadline, b in sorted(lost):
            events.append(ProximityEvent(EventKind.EXIT, b, Zone.OUT_OF_RANGE, deadline, deadline - entered.pop(b)))
            zones[b] = Zone.OUT_OF_RANGE
            filters.pop(b, None)

    def refresh_nearest(t: int) -> None:
        nonlocal nearest
        candidates = {b: filters[b].estimate for b, z in zones.items() if z is not Zone.OUT_OF_RANGE}
        best = nearest_beacon(candidates)
        if best != nearest:
            nearest = best
            if best is not None:
                events.append(ProximityEvent(EventKind.NEAREST_CHANGED, best, zones[best], t))

    for s in batch:
        b, t = s.beacon, s.timestamp
        if b not in beacon_map:
            continue
        expire(t)
        fs = filters.get(b) or kalman_init(params, s.rssi)
        fs = kalman_update(fs, s.rssi, params)
        filters[b] = fs
        last_seen[b] = t

        zone = classify_zone(distance_noise_corrected(env, fs.estimate), thresholds)
        prev = zones.get(b, Zone.OUT_OF_RANGE)
        if prev is Zone.OUT_OF_RANGE and zone is not Zone.OUT_OF_RANGE:
            entered[b] = t
            events.append(ProximityEvent(EventKind.ENTER, b, zone, t))
        if zone <= Zone.NEAR and zone < prev:
            events.append(ProximityEvent(EventKind.NOTIFICATION, b, zone, t))
        if zone is Zone.OUT_OF_RANGE and prev is not Zone.OUT_OF_RANGE:
            events.append(ProximityEvent(EventKind.EXIT, b, zone, t, t - entered.pop(b)))
        zones[b] = zone
        refresh_nearest(t)

    expire(now)
    refresh_nearest(now)
    new_state = SessionState(
        filters=filters, zones=zones, nearest=nearest, entered=entered, last_seen=last_seen, clock=now
    )
    return new_state, events

