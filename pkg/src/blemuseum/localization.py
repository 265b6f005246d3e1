"""Position estimation from per-beacon ranges.

Three anchors use closed-form trilateration in a canonical frame where
anchor 1 sits at the origin, anchor 3 on the positive x axis and anchor 2
above it. More anchors fall back to linear least squares.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import BeaconId, BeaconMap, Position2D, PositionFix, ValidationError, check_beacon_id

MIN_TRIANGLE_AREA = 1e-9  # m^2


class DegenerateGeometryError(ValueError):
    pass


class InsufficientAnchorsError(ValueError):
    pass


@dataclass(frozen=True)
class RangeObservation:
    beacon: BeaconId
    radius: float  # m

    def __post_init__(self):
        check_beacon_id(self.beacon)
        if not math.isfinite(self.radius) or self.radius <= 0:
            raise ValidationError("radius", f"must be > 0, got {self.radius!r}")


@dataclass(frozen=True)
class CanonicalFrame:
    """Rigid map from world coordinates into the trilateration frame.

    ``to_canonical`` translates, then rotates, then optionally mirrors y.
    """

    translation: Position2D
    rotation: float  # rad
    reflection: bool

    def to_canonical(self, p: Position2D) -> Position2D:
        x = p.x + self.translation.x
        y = p.y + self.translation.y
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        xr, yr = c * x - s * y, s * x + c * y
        return Position2D(xr, -yr if self.reflection else yr)

    def from_canonical(self, p: Position2D) -> Position2D:
        y = -p.y if self.reflection else p.y
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        xr, yr = c * p.x + s * y, -s * p.x + c * y
        return Position2D(xr - self.translation.x, yr - self.translation.y)


def _triangle_area(a: Position2D, b: Position2D, c: Position2D) -> float:
    return 0.5 * abs((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))


def build_canonical_frame(a1: Position2D, a2: Position2D, a3: Position2D) -> CanonicalFrame:
    if _triangle_area(a1, a2, a3) <= MIN_TRIANGLE_AREA:
        raise DegenerateGeometryError("collinear anchors: the three anchors do not span a triangle")
    translation = Position2D(-a1.x, -a1.y)
    rotation = -math.atan2(a3.y - a1.y, a3.x - a1.x)
    frame = CanonicalFrame(translation, rotation, False)
    if frame.to_canonical(a2).y < 0:
        frame = CanonicalFrame(translation, rotation, True)
    return frame


def trilaterate_canonical(r1: float, r2: float, r3: float, k: float, l: float, m: float) -> Position2D:
    """Closed-form receiver position for anchors at (0,0), (l,m), (k,0)."""
    if k == 0 or m == 0:
        raise DegenerateGeometryError("collinear anchors: k and m must be non-zero")
    if min(r1, r2, r3) <= 0:
        raise ValueError("radii must be > 0")
    x = (r1 * r1 - r3 * r3 + k * k) / (2.0 * k)
    y = (r1 * r1 - r2 * r2 + l * l + m * m) / (2.0 * m) - (l / m) * x
    return Position2D(x, y)


def position_error(estimated: Position2D, real: Position2D) -> float:
    return math.hypot(estimated.x - real.x, estimated.y - real.y)


def _trilaterate3(anchors: Sequence[Position2D], radii: Sequence[float]) -> Position2D:
    frame = build_canonical_frame(*anchors)
    c2 = frame.to_canonical(anchors[1])
    c3 = frame.to_canonical(anchors[2])
    # c3.y is zero up to rounding; k is its x.
    p = trilaterate_canonical(radii[0], radii[1], radii[2], c3.x, c2.x, c2.y)
    return frame.from_canonical(p)


def _multilaterate(anchors: Sequence[Position2D], radii: Sequence[float]) -> Position2D:
    # Difference the circle equations over every anchor pair; center first for conditioning.
    pts = np.array([[a.x, a.y] for a in anchors])
    r = np.asarray(radii, dtype=float)
    center = pts.mean(axis=0)
    pts = pts - center
    rows, rhs = [], []
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            rows.append(2.0 * (pts[j] - pts[i]))
            rhs.append(r[i] ** 2 - r[j] ** 2 - pts[i] @ pts[i] + pts[j] @ pts[j])
    a = np.array(rows)
    b = np.array(rhs)
    sol, _, rank, sv = np.linalg.lstsq(a, b, rcond=None)
    if rank < 2 or sv[-1] <= 1e-9 * sv[0]:
        raise DegenerateGeometryError("collinear anchors: least-squares system is rank deficient")
    return Position2D(float(sol[0] + center[0]), float(sol[1] + center[1]))


def localize(beacon_map: BeaconMap, ranges: Sequence[RangeObservation]) -> PositionFix:
    """Estimate a position from three or more ranges.

    Inconsistent radii still produce a fix; ``residual`` is the RMS mismatch
    between the fix's distances to each anchor and the observed radii.
    """
    ids = [r.beacon for r in ranges]
    if len(set(ids)) != len(ids):
        raise ValueError("ranges must reference distinct beacons")
    for b in ids:
        if b not in beacon_map:
            raise KeyError(f"unknown beacon {b!r}")
    if len(ranges) < 3:
        raise InsufficientAnchorsError(f"insufficient anchors: need 3 ranges, got {len(ranges)}")

    anchors = [beacon_map[b].position for b in ids]
    radii = [r.radius for r in ranges]
    if len(ranges) == 3:
        fix = _trilaterate3(anchors, radii)
    else:
        fix = _multilaterate(anchors, radii)
    misfit = [fix.distance_to(a) - r for a, r in zip(anchors, radii)]
    residual = math.sqrt(sum(e * e for e in misfit) / len(misfit))
    return PositionFix(position=fix, residual=residual, source_beacons=tuple(ids))
