"""Synthetic RSSI under log-normal shadowing, and the experiment harnesses.

The harnesses rebuild three bench experiments: distance estimation at a
series of ranges from one beacon, trilateration inside a beacon triangle,
and nearest-beacon detection among closely spaced beacons. Geometry that
the original measurements leave undimensioned is fixed here and echoed in
every report.
"""

from __future__ import annotations

import bisect
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Optional, Sequence, Union

import numpy as np

from .core import (
    RSSI_MAX_DBM,
    RSSI_MIN_DBM,
    BeaconMap,
    BeaconPlacement,
    PathLossModel,
    Position2D,
    RssiSample,
    ValidationError,
)
from .filtering import filter_trace, params_for_model
from .localization import RangeObservation, localize, position_error
from .pathloss import distance_noise_corrected, predict_rssi
from .proximity import Reducer, nearest_beacon, snapshot

Seed = Union[int, Sequence[int]]

COINCIDENT_OFFSET_M = 1e-3
DEFAULT_INTERVAL_MS = 100
PROXIMITY_DISTANCES = tuple(round(0.5 * i, 1) for i in range(1, 11))
LOCALIZATION_TOPOLOGIES = ((1.0, 2.0), (3.0, 4.0))
DETECTION_SPACINGS = (1.0, 1.5, 2.0)
CORRIDOR_WIDTH_M = 2.3


@dataclass(frozen=True)
class EnvironmentProfile:
    name: str
    model: PathLossModel

    def __post_init__(self):
        if self.name not in ("laboratory", "corridor", "custom"):
            raise ValidationError("name", f"unknown environment {self.name!r}")


# Shadowing deviations are not published; these were chosen so the detection
# harness lands near the measured accuracy tables (corridor noisier than lab).
LABORATORY = EnvironmentProfile("laboratory", PathLossModel(n=2.208, rssi0=-68.99, d0=1.0, sigma=2.0))
CORRIDOR = EnvironmentProfile("corridor", PathLossModel(n=2.341, rssi0=-62.94, d0=1.0, sigma=3.0))

_ALIASES = {"lab": LABORATORY, "laboratory": LABORATORY, "corridor": CORRIDOR}


def environment(name: str) -> EnvironmentProfile:
    try:
        return _ALIASES[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; expected lab or corridor") from None


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-linear path through ``(position, arrival_ms)`` waypoints."""

    waypoints: tuple[tuple[Position2D, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "waypoints", tuple((p, int(t)) for p, t in self.waypoints))
        if not self.waypoints:
            raise ValidationError("waypoints", "a trajectory needs at least one waypoint")
        times = [t for _, t in self.waypoints]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("waypoints", "arrival times must be strictly increasing")

    @property
    def start(self) -> int:
        return self.waypoints[0][1]

    @property
    def end(self) -> int:
        return self.waypoints[-1][1]

    def position_at(self, t: float) -> Position2D:
        """Clamped to the first/last waypoint outside the covered span."""
        wp = self.waypoints
        if t <= wp[0][1]:
            return wp[0][0]
        if t >= wp[-1][1]:
            return wp[-1][0]
        i = bisect.bisect_right([w[1] for w in wp], t)
        (p0, t0), (p1, t1) = wp[i - 1], wp[i]
        f = (t - t0) / (t1 - t0)
        return Position2D(p0.x + f * (p1.x - p0.x), p0.y + f * (p1.y - p0.y))


@dataclass
class ExperimentReport:
    experiment: str
    seed: Any
    trials: int
    environment: dict
    geometry: dict
    conditions: list[dict]
    summary: dict = field(default_factory=dict)
    # Per-condition raw values for plotting; not part of the summary tables.
    series: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.trials <= 0:
            raise ValidationError("trials", "must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


def sample_rssi(model: PathLossModel, distance: float, rng: np.random.Generator) -> float:
    """One shadowed reading: the mean path loss plus N(0, sigma^2).

    Always consumes exactly one normal draw, so streams stay aligned whatever
    ``sigma`` is.
    """
    mean = predict_rssi(model, distance)
    return mean + float(rng.normal(0.0, model.sigma))


def _clamp(rssi: float) -> float:
    return min(RSSI_MAX_DBM, max(RSSI_MIN_DBM, rssi))


def _simulate(
    beacon_map: BeaconMap,
    position_at: Callable[[int], Position2D],
    start: int,
    end: int,
    rng: np.random.Generator,
    max_range: Optional[float],
) -> list[RssiSample]:
    ticks = []
    for idx, b in enumerate(beacon_map.beacons):
        ticks.extend((t, idx) for t in range(start, end, b.adv_interval))
    ticks.sort()

    model = beacon_map.environment
    out = []
    warned = False
    for t, idx in ticks:
        b = beacon_map.beacons[idx]
        d = position_at(t).distance_to(b.position)
        if max_range is not None and d > max_range:
            continue
        if d == 0:
            if not warned:
                warnings.warn(f"receiver coincides with beacon {b.beacon!r}; offset by 1 mm", stacklevel=3)
                warned = True
            d = COINCIDENT_OFFSET_M
        out.append(RssiSample(b.beacon, t, _clamp(sample_rssi(model, d, rng))))
    return out


def simulate_static(
    beacon_map: BeaconMap,
    position: Position2D,
    duration: int,
    rng: np.random.Generator,
    start: int = 0,
    max_range: Optional[float] = None,
) -> list[RssiSample]:
    """Readings at a fixed receiver position over ``[start, start + duration)``.

    Every beacon advertises at ``start`` and then once per advertising
    interval. Beacons farther than ``max_range`` are not heard. Readings are
    clamped to the receiver's reportable range.
    """
    if duration <= 0:
        raise ValueError("duration must be > 0")
    return _simulate(beacon_map, lambda t: position, start, start + duration, rng, max_range)


def simulate_walk(
    beacon_map: BeaconMap,
    trajectory: Trajectory,
    rng: np.random.Generator,
    duration: Optional[int] = None,
    max_range: Optional[float] = None,
) -> list[RssiSample]:
    """Readings along a trajectory.

    Covers ``[trajectory.start, trajectory.end)`` unless ``duration`` is
    given, in which case the receiver holds its final position once the
    trajectory runs out.
    """
    end = trajectory.end if duration is None else trajectory.start + duration
    return _simulate(beacon_map, trajectory.position_at, trajectory.start, end, rng, max_range)


def _rng(seed: Seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def _stats(values: Sequence[float]) -> dict:
    a = np.asarray(values, dtype=float)
    return {
        "count": int(a.size),
        "mean": float(a.mean()),
        "median": float(np.median(a)),
        "p95": float(np.percentile(a, 95)),
    }


def _model_dict(name: str, model: PathLossModel) -> dict:
    return {"name": name, "n": model.n, "rssi0_dbm": model.rssi0, "d0_m": model.d0, "sigma_db": model.sigma}


def _single_beacon_map(model: PathLossModel, interval: int) -> BeaconMap:
    return BeaconMap((BeaconPlacement("B1", 0.0, 0.0, adv_interval=interval),), model)


def run_proximity_experiment(
    env: EnvironmentProfile,
    distances: Sequence[float] = PROXIMITY_DISTANCES,
    samples_per_distance: int = 100,
    seed: Seed = 0,
    interval: int = DEFAULT_INTERVAL_MS,
) -> ExperimentReport:
    """Distance estimation error from one beacon, raw versus Kalman filtered.

    Both pipelines invert every reading with the noise-corrected estimator;
    the filtered one first smooths the RSSI stream.
    """
    if samples_per_distance < 1:
        raise ValueError("samples_per_distance must be >= 1")
    if any(d <= 0 for d in distances):
        raise ValueError("distances must be positive")
    rng = _rng(seed)
    model = env.model
    bmap = _single_beacon_map(model, interval)
    kalman = params_for_model(model)

    conditions, series = [], {"raw": {}, "kalman": {}}
    pooled: dict[str, list[float]] = {"raw": [], "kalman": []}
    for d in distances:
        samples = simulate_static(bmap, Position2D(d, 0.0), samples_per_distance * interval, rng)
        raw = [abs(distance_noise_corrected(model, s.rssi) - d) for s in samples]
        smooth = [abs(distance_noise_corrected(model, est) - d) for _, est in filter_trace(kalman, samples)]
        for name, errs in (("raw", raw), ("kalman", smooth)):
            conditions.append({"distance_m": d, "pipeline": name, **_stats(errs)})
            series[name][f"{d:g}"] = errs
            pooled[name].extend(errs)

    summary = {name: _stats(errs) for name, errs in pooled.items()}
    return ExperimentReport(
        experiment="proximity",
        seed=seed,
        trials=1,
        environment=_model_dict(env.name, model),
        geometry={"beacon": [0.0, 0.0], "distances_m": list(distances), "interval_ms": interval,
                  "samples_per_distance": samples_per_distance},
        conditions=conditions,
        summary=summary,
        series=series,
    )


def localization_topology(d1: float, d2: float) -> list[Position2D]:
    """Isosceles beacon triangle: base ``d1`` on the x axis, both legs ``d2``."""
    if d1 <= 0 or d2 <= 0:
        raise ValueError("d1 and d2 must be positive")
    if not 2.0 * d2 > d1:
        raise ValueError("degenerate triangle: need 2*d2 > d1")
    return [Position2D(0.0, 0.0), Position2D(d1 / 2.0, math.sqrt(d2 * d2 - d1 * d1 / 4.0)), Position2D(d1, 0.0)]


def _circumcenter(a: Position2D, b: Position2D, c: Position2D) -> Position2D:
    den = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y))
    if abs(den) < 1e-12:
        raise ValueError("degenerate triangle")
    a2, b2, c2 = a.x ** 2 + a.y ** 2, b.x ** 2 + b.y ** 2, c.x ** 2 + c.y ** 2
    ux = (a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / den
    uy = (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / den
    return Position2D(ux, uy)


def localization_locations(beacons: Sequence[Position2D]) -> dict[str, Position2D]:
    """D is equidistant from all three beacons; A-C sit halfway from each beacon to D."""
    centre = _circumcenter(*beacons)
    locs = {name: Position2D((b.x + centre.x) / 2.0, (b.y + centre.y) / 2.0) for name, b in zip("ABC", beacons)}
    locs["D"] = centre
    return locs


def run_localization_experiment(
    d1: float,
    d2: float,
    locations: Optional[dict[str, Position2D]] = None,
    trial_duration: int = 60_000,
    seed: Seed = 0,
    env: EnvironmentProfile = LABORATORY,
    interval: int = DEFAULT_INTERVAL_MS,
) -> ExperimentReport:
    """Per-tick trilateration from unfiltered readings at each test location."""
    anchors = localization_topology(d1, d2)
    ids = ("B1", "B2", "B3")
    bmap = BeaconMap(
        tuple(BeaconPlacement(i, a.x, a.y, adv_interval=interval) for i, a in zip(ids, anchors)), env.model
    )
    locations = dict(locations) if locations is not None else localization_locations(anchors)
    rng = _rng(seed)

    conditions, series = [], {}
    for name, loc in locations.items():
        samples = simulate_static(bmap, loc, trial_duration, rng)
        by_tick: dict[int, dict[str, float]] = {}
        for s in samples:
            by_tick.setdefault(s.timestamp, {})[s.beacon] = s.rssi
        errors = []
        for t in sorted(by_tick):
            reading = by_tick[t]
            if len(reading) < 3:
                continue
            ranges = [RangeObservation(b, distance_noise_corrected(env.model, reading[b])) for b in ids]
            errors.append(position_error(localize(bmap, ranges).position, loc))
        conditions.append({"d1_m": d1, "d2_m": d2, "location": name, "x_m": loc.x, "y_m": loc.y, **_stats(errors)})
        series[name] = errors

    return ExperimentReport(
        experiment="localization",
        seed=seed,
        trials=1,
        environment=_model_dict(env.name, env.model),
        geometry={"d1_m": d1, "d2_m": d2, "beacons": {i: [a.x, a.y] for i, a in zip(ids, anchors)},
                  "locations": {k: [v.x, v.y] for k, v in locations.items()}, "trial_duration_ms": trial_duration},
        conditions=conditions,
        series=series,
    )


def detection_topology(topology: str, d: float) -> tuple[dict[str, Position2D], dict[str, Position2D]]:
    """Beacon positions and default receiver locations for a named layout.

    ``lab6``: three beacons on a line ``d`` apart, receivers 0.5/1.0/1.5 m
    off beacon A (L1-L3) and off beacon B (L4-L6). ``corridor4``: two pairs
    of beacons ``d`` apart on opposite walls of a 2.3 m corridor, receivers
    0.5/1.0 m off beacon A.
    """
    if d <= 0:
        raise ValueError("beacon spacing d must be > 0")
    if topology == "lab6":
        beacons = {"A": Position2D(0.0, 0.0), "B": Position2D(d, 0.0), "C": Position2D(2 * d, 0.0)}
        locs = {f"L{i + 1}": Position2D(0.0, off) for i, off in enumerate((0.5, 1.0, 1.5))}
        locs.update({f"L{i + 4}": Position2D(d, off) for i, off in enumerate((0.5, 1.0, 1.5))})
    elif topology == "corridor4":
        w = CORRIDOR_WIDTH_M
        beacons = {"A": Position2D(0.0, 0.0), "B": Position2D(d, 0.0), "C": Position2D(0.0, w), "D": Position2D(d, w)}
        locs = {"L1": Position2D(0.0, 0.5), "L2": Position2D(0.0, 1.0)}
    else:
        raise ValueError(f"unknown topology {topology!r}; expected lab6, corridor4 or custom")
    return beacons, locs


def _true_nearest(beacons: dict[str, Position2D], loc: Position2D) -> str:
    return min(beacons, key=lambda b: (beacons[b].distance_to(loc), b))


def run_detection_experiment(
    topology: str = "lab6",
    d: float = 1.0,
    locations: Optional[dict[str, Position2D]] = None,
    readings: int = 100,
    reducer: Reducer | str = Reducer.LAST,
    seed: Seed = 0,
    env: Optional[EnvironmentProfile] = None,
    beacons: Optional[dict[str, Position2D]] = None,
    window: int = 1000,
    interval: int = DEFAULT_INTERVAL_MS,
) -> ExperimentReport:
    """Nearest-beacon classification accuracy at each receiver location.

    Every reading (one advertising round) is classified on its own using the
    chosen reducer over the trailing window. ``topology="custom"`` takes
    ``beacons`` and ``locations`` explicitly.
    """
    if readings < 1:
        raise ValueError("readings must be >= 1")
    reducer = Reducer(reducer)
    if topology == "custom":
        if not beacons or not locations:
            raise ValueError("custom topology needs beacons and locations")
        default_env = LABORATORY
    else:
        beacons, default_locs = detection_topology(topology, d)
        locations = dict(locations) if locations is not None else default_locs
        default_env = CORRIDOR if topology == "corridor4" else LABORATORY
    env = env or default_env
    bmap = BeaconMap(
        tuple(BeaconPlacement(b, p.x, p.y, adv_interval=interval) for b, p in beacons.items()), env.model
    )
    kalman = params_for_model(env.model)
    rng = _rng(seed)

    conditions = []
    for name, loc in locations.items():
        samples = simulate_static(bmap, loc, readings * interval, rng)
        stamps = [s.timestamp for s in samples]
        counts = {b: 0 for b in beacons}
        counts["none"] = 0
        for k in range(readings):
            now = k * interval
            lo = bisect.bisect_right(stamps, now - window)
            hi = bisect.bisect_right(stamps, now)
            if reducer is Reducer.LAST:
                lo = bisect.bisect_left(stamps, now)
            snap = snapshot(samples[lo:hi], window, now, reducer, kalman)
            counts[nearest_beacon(snap) or "none"] += 1
        truth = _true_nearest(beacons, loc)
        conditions.append({
            "d_m": d,
            "location": name,
            "x_m": loc.x,
            "y_m": loc.y,
            "truth": truth,
            "counts": counts,
            "readings": readings,
            "accuracy_pct": 100.0 * counts[truth] / readings,
        })

    return ExperimentReport(
        experiment="detection",
        seed=seed,
        trials=1,
        environment=_model_dict(env.name, env.model),
        geometry={"topology": topology, "d_m": d, "beacons": {b: [p.x, p.y] for b, p in beacons.items()},
                  "locations": {k: [v.x, v.y] for k, v in locations.items()}, "reducer": reducer.value,
                  "window_ms": window},
        conditions=conditions,
    )


# -- multi-trial replication -------------------------------------------------


def _median_rows(per_trial: list[list[dict]], keys: Sequence[str], metrics: Sequence[str]) -> list[dict]:
    rows = []
    for i, first in enumerate(per_trial[0]):
        row = {k: first[k] for k in keys}
        for m in metrics:
            row[m] = float(np.median([trial[i][m] for trial in per_trial]))
        rows.append(row)
    return rows


def replicate_proximity(env: EnvironmentProfile, seed: int = 0, trials: int = 20,
                        samples_per_distance: int = 100) -> ExperimentReport:
    reports = [run_proximity_experiment(env, samples_per_distance=samples_per_distance, seed=[seed, i])
               for i in range(trials)]
    conditions = _median_rows([r.conditions for r in reports], ("distance_m", "pipeline"), ("mean", "median", "p95"))
    summary = {
        name: {m: float(np.median([r.summary[name][m] for r in reports])) for m in ("mean", "median", "p95")}
        for name in ("raw", "kalman")
    }
    summary["kalman_p95_le_raw_trials"] = sum(r.summary["kalman"]["p95"] <= r.summary["raw"]["p95"] for r in reports)
    return ExperimentReport(
        experiment="proximity",
        seed=seed,
        trials=trials,
        environment=reports[0].environment,
        geometry=reports[0].geometry,
        conditions=conditions,
        summary=summary,
        series=reports[0].series,
    )


def replicate_localization(env: EnvironmentProfile, seed: int = 0, trials: int = 20,
                           trial_duration: int = 60_000) -> ExperimentReport:
    conditions, geometry, series = [], {}, {}
    for d1, d2 in LOCALIZATION_TOPOLOGIES:
        reports = [run_localization_experiment(d1, d2, trial_duration=trial_duration, seed=[seed, i], env=env)
                   for i in range(trials)]
        conditions += _median_rows(
            [r.conditions for r in reports], ("d1_m", "d2_m", "location", "x_m", "y_m"), ("mean", "median", "p95")
        )
        geometry[f"{d1:g}x{d2:g}"] = reports[0].geometry
        series[f"{d1:g}x{d2:g}"] = reports[0].series
    return ExperimentReport(
        experiment="localization",
        seed=seed,
        trials=trials,
        environment=_model_dict(env.name, env.model),
        geometry=geometry,
        conditions=conditions,
        series=series,
    )


def replicate_detection(env: EnvironmentProfile, seed: int = 0, trials: int = 20, readings: int = 100,
                        reducer: Reducer | str = Reducer.LAST) -> ExperimentReport:
    topology = "corridor4" if env.name == "corridor" else "lab6"
    conditions, geometry = [], {}
    for d in DETECTION_SPACINGS:
        reports = [run_detection_experiment(topology, d, readings=readings, reducer=reducer, seed=[seed, i], env=env)
                   for i in range(trials)]
        rows = _median_rows([r.conditions for r in reports], ("d_m", "location", "x_m", "y_m", "truth", "readings"),
                            ("accuracy_pct",))
        for i, row in enumerate(rows):
            # counts from the first trial keep the table's shape; accuracy is the cross-trial median
            row["counts_trial0"] = reports[0].conditions[i]["counts"]
        conditions += rows
        geometry[f"{d:g}"] = reports[0].geometry
    return ExperimentReport(
        experiment="detection",
        seed=seed,
        trials=trials,
        environment=_model_dict(env.name, env.model),
        geometry=geometry,
        conditions=conditions,
    )
