"""Visit analytics over proximity events: retention, paths, recommendations."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .core import BeaconId
from .proximity import EventKind, ProximityEvent

VisitorId = str

HOUR_MS = 3_600_000
DAY_MS = 24 * HOUR_MS


class OrderingError(ValueError):
    pass


class OrphanExitError(ValueError):
    pass


@dataclass(frozen=True)
class Visit:
    visitor: VisitorId
    beacon: BeaconId
    enter: int  # ms
    dwell: Optional[int] = None  # ms; None while the visit is still open


@dataclass
class BeaconRetention:
    count: int = 0
    total_dwell: int = 0
    mean_dwell: float = 0.0
    # Dwell ms per UTC hour of day of the visit's entry.
    hourly_dwell: list[int] = field(default_factory=lambda: [0] * 24)


@dataclass
class RetentionReport:
    start: int
    end: int
    beacons: dict[BeaconId, BeaconRetention]
    open_visits: int = 0

    def to_dict(self) -> dict:
        return {
            "from_ms": self.start,
            "to_ms": self.end,
            "open_visits": self.open_visits,
            "beacons": {
                b: {"count": r.count, "total_dwell_ms": r.total_dwell, "mean_dwell_ms": r.mean_dwell,
                    "hourly_dwell_ms": list(r.hourly_dwell)}
                for b, r in sorted(self.beacons.items())
            },
        }


class EventStore:
    """Append-only log of ``(visitor, event)`` records.

    Exact duplicates of stored records are dropped, so re-sent batches are
    harmless. Per visitor, timestamps never decrease and each beacon's
    Enter/Exit events alternate.
    """

    def __init__(self) -> None:
        self._records: list[tuple[VisitorId, ProximityEvent]] = []
        self._seen: set[tuple[VisitorId, ProximityEvent]] = set()
        self._clock: dict[VisitorId, int] = {}
        self._open: dict[tuple[VisitorId, BeaconId], int] = {}
        self._visits: list[Visit] = []

    @property
    def records(self) -> tuple[tuple[VisitorId, ProximityEvent], ...]:
        return tuple(self._records)

    @property
    def visitors(self) -> set[VisitorId]:
        return set(self._clock)

    def __len__(self) -> int:
        return len(self._records)

    def completed_visits(self) -> list[Visit]:
        return list(self._visits)

    def open_visits(self) -> list[Visit]:
        return [Visit(v, b, t) for (v, b), t in self._open.items()]

    def ingest(self, visitor: VisitorId, events: Iterable[ProximityEvent]) -> EventStore:
        if not isinstance(visitor, str) or not visitor:
            raise ValueError("visitor id must be a non-empty string")
        fresh = [e for e in dict.fromkeys(events) if (visitor, e) not in self._seen]

        # Validate the whole batch before touching the store.
        clock = self._clock.get(visitor, 0)
        opened = {b: t for (v, b), t in self._open.items() if v == visitor}
        for e in fresh:
            if e.timestamp < clock:
                raise OrderingError(f"event at {e.timestamp} precedes {clock} for visitor {visitor!r}")
            clock = e.timestamp
            if e.kind is EventKind.ENTER:
                if e.beacon in opened:
                    raise OrderingError(f"second enter for beacon {e.beacon!r} without an exit")
                opened[e.beacon] = e.timestamp
            elif e.kind is EventKind.EXIT:
                if e.beacon not in opened:
                    raise OrphanExitError(f"orphan exit for beacon {e.beacon!r} (visitor {visitor!r})")
                enter = opened.pop(e.beacon)
                if e.dwell != e.timestamp - enter:
                    raise OrderingError(f"exit dwell {e.dwell} does not match enter at {enter} for beacon {e.beacon!r}")

        for e in fresh:
            self._records.append((visitor, e))
            self._seen.add((visitor, e))
            self._clock[visitor] = e.timestamp
            if e.kind is EventKind.ENTER:
                self._open[(visitor, e.beacon)] = e.timestamp
            elif e.kind is EventKind.EXIT:
                enter = self._open.pop((visitor, e.beacon))
                self._visits.append(Visit(visitor, e.beacon, enter, e.dwell))
        return self


def ingest(store: EventStore, visitor: VisitorId, events: Iterable[ProximityEvent]) -> EventStore:
    return store.ingest(visitor, events)


def retention_report(store: EventStore, start: int, end: int) -> RetentionReport:
    """Per-beacon dwell totals for visits entered in ``[start, end)``.

    Visits still open are left out of the totals and only counted.
    """
    if not start < end:
        raise ValueError(f"inverted interval: from={start} must be < to={end}")
    beacons: dict[BeaconId, BeaconRetention] = defaultdict(BeaconRetention)
    for v in store.completed_visits():
        if start <= v.enter < end:
            r = beacons[v.beacon]
            r.count += 1
            r.total_dwell += v.dwell
            r.hourly_dwell[(v.enter % DAY_MS) // HOUR_MS] += v.dwell
    for r in beacons.values():
        r.mean_dwell = r.total_dwell / r.count
    open_count = sum(1 for v in store.open_visits() if start <= v.enter < end)
    return RetentionReport(start, end, dict(beacons), open_count)


def visitor_path(store: EventStore, visitor: VisitorId) -> list[tuple[BeaconId, int, int]]:
    if visitor not in store.visitors:
        raise KeyError(f"unknown visitor {visitor!r}")
    visits = [v for v in store.completed_visits() if v.visitor == visitor]
    visits.sort(key=lambda v: v.enter)
    return [(v.beacon, v.enter, v.dwell) for v in visits]


def recommend(store: EventStore, visitor: VisitorId, catalog: Sequence[BeaconId], limit: int = 3) -> list[BeaconId]:
    """Unvisited exhibits ranked by total dwell across all visitors."""
    if limit < 1:
        raise ValueError("limit must be >= 1")
    if not catalog:
        raise ValueError("empty catalog")
    popularity: dict[BeaconId, int] = defaultdict(int)
    visited = set()
    for v in store.completed_visits():
        popularity[v.beacon] += v.dwell
        if v.visitor == visitor:
            visited.add(v.beacon)
    candidates = [b for b in dict.fromkeys(catalog) if b not in visited]
    candidates.sort(key=lambda b: (-popularity[b], b))
    return candidates[:limit]
