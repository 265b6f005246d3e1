"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 internal failure.
Only a short summary goes to stdout; results go to ``--out``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections import defaultdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import analytics, ingest_io
from .core import Position2D, RssiSample, ValidationError
from .filtering import filter_trace, params_for_model
from .localization import DegenerateGeometryError, InsufficientAnchorsError, RangeObservation, localize
from .pathloss import CalibrationPoint, RankDeficientError, distance_noise_corrected, fit_path_loss
from .proximity import DEFAULT_WINDOW_MS, SessionState, ZoneThresholds, update_session
from .simulator import (
    Trajectory,
    environment,
    replicate_detection,
    replicate_localization,
    replicate_proximity,
    simulate_static,
    simulate_walk,
)

log = logging.getLogger("blemuseum")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- helpers -------------------------------------------------------------------


def _segments(source: str) -> list[tuple[int, int, float]]:
    """Distance annotations: a CSV file ``start_ms,end_ms,distance_m`` or inline
    ``start-end:distance,...``. Intervals are half-open."""
    path = Path(source)
    segs = []
    if path.exists():
        lines = path.read_text().splitlines()
        if not lines or lines[0].strip() != "start_ms,end_ms,distance_m":
            raise DataError(f"{source}: header must be start_ms,end_ms,distance_m")
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            try:
                a, b, d = line.split(",")
                segs.append((int(a), int(b), float(d)))
            except ValueError:
                raise DataError(f"{source}: line {lineno}: expected start_ms,end_ms,distance_m") from None
    else:
        for item in source.split(","):
            try:
                span, d = item.split(":")
                a, b = span.split("-")
                segs.append((int(a), int(b), float(d)))
            except ValueError:
                raise DataError(f"cannot read distances {source!r}: no such file, and not start-end:distance,...") from None
    for a, b, d in segs:
        if not a < b or not d > 0:
            raise DataError(f"bad distance segment {a}-{b}:{d}")
    return segs


def _by_beacon(samples: Sequence[RssiSample]) -> dict[str, list[RssiSample]]:
    groups: dict[str, list[RssiSample]] = defaultdict(list)
    for s in samples:
        groups[s.beacon].append(s)
    return groups


def _parse_point(text: str) -> Position2D:
    try:
        x, y = (float(v) for v in text.split(","))
        return Position2D(x, y)
    except (ValueError, ValidationError):
        raise UsageError(f"expected X,Y in metres, got {text!r}") from None


def _read_trajectory(path: str) -> Trajectory:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "t_ms,x_m,y_m":
        raise DataError(f"{path}: header must be t_ms,x_m,y_m")
    waypoints = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            t, x, y = line.split(",")
            waypoints.append((Position2D(float(x), float(y)), int(t)))
        except (ValueError, ValidationError):
            raise DataError(f"{path}: line {lineno}: expected t_ms,x_m,y_m") from None
    return Trajectory(tuple(waypoints))


# -- commands ------------------------------------------------------------------


def cmd_fit(args) -> int:
    samples = ingest_io.read_trace(args.trace)
    segs = _segments(args.distances)
    points = []
    for s in samples:
        if args.beacon and s.beacon != args.beacon:
            continue
        for a, b, d in segs:
            if a <= s.timestamp < b:
                points.append(CalibrationPoint(d, s.rssi))
                break
    try:
        fit = fit_path_loss(points, d0=args.d0)
    except RankDeficientError as exc:
        raise DataError(str(exc)) from None
    ingest_io._write_text(ingest_io.dumps_json(ingest_io.fit_to_dict(fit)), args.out)
    m = fit.model
    print(f"fit {fit.point_count} points: n={m.n:.6f} rssi0={m.rssi0:.6f} dBm sigma={m.sigma:.6f} dB rmse={fit.rmse:.6f} dB")
    return EXIT_OK


def _window_values(samples, beacon_map, window: int, use_kalman: bool):
    """Yield ``(window_end, {beacon: rssi})`` over consecutive windows."""
    if not samples:
        return
    kalman = params_for_model(beacon_map.environment)
    streams = {}
    for b, group in _by_beacon(samples).items():
        if b not in beacon_map:
            continue
        group.sort(key=lambda s: s.timestamp)
        values = filter_trace(kalman, group) if use_kalman else [(s.timestamp, s.rssi) for s in group]
        streams[b] = values
    first = min(s.timestamp for s in samples)
    last = max(s.timestamp for s in samples)
    end = first - 1 + window
    cursors = {b: 0 for b in streams}
    while True:
        snap = {}
        for b, values in streams.items():
            i = cursors[b]
            latest = None
            while i < len(values) and values[i][0] <= end:
                latest = values[i]
                i += 1
            cursors[b] = i
            if latest is not None and latest[0] > end - window:
                snap[b] = latest[1]
        yield end, snap
        if end >= last:
            break
        end += window


def cmd_estimate(args) -> int:
    bmap = ingest_io.read_beacon_map(args.map)
    samples = ingest_io.read_trace(args.trace)
    env = bmap.environment
    kalman = params_for_model(env)
    rows = []
    for b, group in sorted(_by_beacon(samples).items()):
        if b not in bmap:
            continue
        group.sort(key=lambda s: s.timestamp)
        filtered = filter_trace(kalman, group) if args.filter == "kalman" else [(s.timestamp, s.rssi) for s in group]
        for s, (_, est) in zip(group, filtered):
            rows.append((s.timestamp, b, s.rssi, est, distance_noise_corrected(env, est)))
    rows.sort(key=lambda r: (r[0], r[1]))
    ingest_io.write_columns(("timestamp_ms", "beacon_id", "rssi_dbm", "used_rssi_dbm", "distance_m"), rows, args.out)
    print(f"estimated {len(rows)} distances ({args.filter})")
    return EXIT_OK


def cmd_localize(args) -> int:
    bmap = ingest_io.read_beacon_map(args.map)
    if len(bmap.beacons) < 3:
        raise DataError(f"insufficient anchors: map has {len(bmap.beacons)} beacons, need 3")
    samples = ingest_io.read_trace(args.trace)
    env = bmap.environment
    fixes = []
    for end, snap in _window_values(samples, bmap, args.window, args.filter == "kalman"):
        if len(snap) < 3:
            continue
        ranges = [RangeObservation(b, distance_noise_corrected(env, v)) for b, v in sorted(snap.items())]
        try:
            fix = localize(bmap, ranges)
        except DegenerateGeometryError as exc:
            log.warning("window ending %d skipped: %s", end, exc)
            continue
        fixes.append({"window_end_ms": end, "x_m": fix.position.x, "y_m": fix.position.y,
                      "residual_m": fix.residual, "beacons": list(fix.source_beacons)})
    if not fixes:
        raise DataError("insufficient anchors: no window heard 3 or more beacons")
    ingest_io._write_text(ingest_io.dumps_json_lines(fixes), args.out)
    print(f"{len(fixes)} fixes; mean residual {np.mean([f['residual_m'] for f in fixes]):.6f} m")
    return EXIT_OK


def cmd_detect(args) -> int:
    bmap = ingest_io.read_beacon_map(args.map)
    samples = sorted(ingest_io.read_trace(args.trace), key=lambda s: s.timestamp)
    thresholds = ZoneThresholds(args.immediate, args.near, args.range)
    state = SessionState(clock=samples[0].timestamp if samples else 0)
    events = []
    i = 0
    if samples:
        now = samples[0].timestamp + args.window - 1
        while True:
            j = i
            while j < len(samples) and samples[j].timestamp <= now:
                j += 1
            state, new = update_session(state, samples[i:j], now, bmap, thresholds)
            events.extend(new)
            i = j
            if i >= len(samples):
                break
            now += args.window
    # Close out beacons still present once their loss timeout has passed.
    tail = max((3 * p.adv_interval for p in bmap.beacons), default=0) + 1
    state, new = update_session(state, [], state.clock + tail, bmap, thresholds)
    events.extend(new)
    ingest_io.write_events([(args.visitor, e) for e in events], args.out)
    kinds = defaultdict(int)
    for e in events:
        kinds[e.kind.value] += 1
    print("events: " + ", ".join(f"{k}={v}" for k, v in sorted(kinds.items())) if events else "events: none")
    return EXIT_OK


def cmd_simulate(args) -> int:
    bmap = ingest_io.read_beacon_map(args.map)
    rng = np.random.default_rng(args.seed)
    if args.walk:
        samples = simulate_walk(bmap, _read_trajectory(args.walk), rng, duration=args.duration,
                                max_range=args.max_range)
    else:
        if args.at is None or args.duration is None:
            raise UsageError("simulate needs --walk, or both --at and --duration")
        samples = simulate_static(bmap, _parse_point(args.at), args.duration, rng, max_range=args.max_range)
    ingest_io.write_trace(samples, args.out)
    print(f"simulated {len(samples)} samples from {len(bmap.beacons)} beacons (seed {args.seed})")
    return EXIT_OK


def cmd_replicate(args) -> int:
    env = environment(args.env)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.experiment == "proximity":
        report = replicate_proximity(env, seed=args.seed, trials=args.trials)
        rows = [(c["distance_m"], c["pipeline"], c["mean"], c["median"], c["p95"]) for c in report.conditions]
        ingest_io.write_columns(("distance_m", "pipeline", "mean_m", "median_m", "p95_m"), rows, out / "errors.tsv")
        for name, per_distance in report.series.items():
            errs = np.sort(np.concatenate([np.asarray(v) for v in per_distance.values()]))
            cdf = np.arange(1, errs.size + 1) / errs.size
            ingest_io.write_columns(("error_m", "cumulative_probability"), zip(errs.tolist(), cdf.tolist()),
                                    out / f"cdf_{name}.tsv")
        s = report.summary
        line = f"proximity ({env.name}): p95 raw {s['raw']['p95']:.3f} m, kalman {s['kalman']['p95']:.3f} m"
    elif args.experiment == "localization":
        report = replicate_localization(env, seed=args.seed, trials=args.trials)
        table = defaultdict(dict)
        for c in report.conditions:
            table[(c["d1_m"], c["d2_m"])][c["location"]] = c["median"]
        locs = sorted({c["location"] for c in report.conditions})
        rows = [(d1, d2, *(v[k] for k in locs)) for (d1, d2), v in table.items()]
        ingest_io.write_columns(("d1_m", "d2_m", *(f"{k}_median_m" for k in locs)), rows, out / "errors.tsv")
        line = "localization ({}): ".format(env.name) + "; ".join(
            f"{d1:g}/{d2:g}: " + " ".join(f"{k}={v[k]:.3f}" for k in locs) for (d1, d2), v in table.items()
        )
    else:
        report = replicate_detection(env, seed=args.seed, trials=args.trials)
        beacons = sorted(next(iter(report.geometry.values()))["beacons"])
        rows = [(c["d_m"], c["location"], *(c["counts_trial0"][b] for b in beacons), c["accuracy_pct"])
                for c in report.conditions]
        ingest_io.write_columns(("d_m", "location", *beacons, "accuracy_pct"), rows, out / "accuracy.tsv")
        line = f"detection ({env.name}): " + " ".join(
            f"d={c['d_m']:g}/{c['location']}={c['accuracy_pct']:.1f}%" for c in report.conditions
        )
    ingest_io.write_report(report, out / "report.json")
    print(line)
    return EXIT_OK


def cmd_analyze(args) -> int:
    if not args.start < args.end:
        raise UsageError(f"inverted interval: --from {args.start} must be < --to {args.end}")
    records = ingest_io.read_events(args.events)
    store = analytics.EventStore()
    by_visitor: dict[str, list] = defaultdict(list)
    for visitor, event in records:
        by_visitor[visitor or "anonymous"].append(event)
    try:
        for visitor, events in by_visitor.items():
            store.ingest(visitor, events)
    except (analytics.OrphanExitError, analytics.OrderingError) as exc:
        raise DataError(str(exc)) from None
    report = analytics.retention_report(store, args.start, args.end)
    doc = {"retention": report.to_dict()}
    if args.visitor:
        try:
            path = analytics.visitor_path(store, args.visitor)
        except KeyError:
            raise DataError(f"unknown visitor {args.visitor!r}") from None
        catalog = args.catalog.split(",") if args.catalog else sorted({e.beacon for _, e in records})
        doc["visitor"] = {
            "id": args.visitor,
            "path": [{"beacon": b, "enter_ms": t, "dwell_ms": d} for b, t, d in path],
            "recommendations": analytics.recommend(store, args.visitor, catalog, args.limit) if catalog else [],
        }
    ingest_io._write_text(ingest_io.dumps_json(doc), args.out)
    visits = sum(r.count for r in report.beacons.values())
    print(f"{visits} completed visits across {len(report.beacons)} beacons; {report.open_visits} open")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="blemuseum", description="BLE beacon ranging, localization, proximity and visit analytics.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("fit", help="fit a path loss model from a calibration trace")
    s.add_argument("--trace", required=True, help="calibration trace CSV")
    s.add_argument("--distances", required=True,
                   help="CSV file start_ms,end_ms,distance_m or inline start-end:distance,...")
    s.add_argument("--d0", type=float, default=1.0, help="reference distance in metres (default 1.0)")
    s.add_argument("--beacon", help="only use readings from this beacon id")
    s.add_argument("--out", required=True, help="model JSON to write")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("estimate", help="per-reading distance estimates")
    s.add_argument("--map", required=True, help="beacon map JSON")
    s.add_argument("--trace", required=True, help="RSSI trace CSV")
    s.add_argument("--filter", choices=("kalman", "raw"), default="kalman")
    s.add_argument("--out", required=True, help="tab-separated output")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("localize", help="windowed position fixes from a trace")
    s.add_argument("--map", required=True, help="beacon map JSON")
    s.add_argument("--trace", required=True, help="RSSI trace CSV")
    s.add_argument("--window", type=int, default=DEFAULT_WINDOW_MS, help="window length in ms (default 1000)")
    s.add_argument("--filter", choices=("kalman", "raw"), default="kalman",
                   help="kalman: latest filtered value per window; raw: latest reading")
    s.add_argument("--out", required=True, help="fixes as JSON lines")
    s.set_defaults(func=cmd_localize)

    s = sub.add_parser("detect", help="proximity events (enter/exit/notification/nearest) from a trace")
    s.add_argument("--map", required=True, help="beacon map JSON")
    s.add_argument("--trace", required=True, help="RSSI trace CSV")
    s.add_argument("--window", type=int, default=DEFAULT_WINDOW_MS, help="ingestion batch length in ms")
    s.add_argument("--visitor", default="visitor", help="visitor id stamped on events")
    s.add_argument("--immediate", type=float, default=0.5, help="immediate zone limit, m")
    s.add_argument("--near", type=float, default=4.0, help="near zone limit, m")
    s.add_argument("--range", type=float, default=10.0, help="far zone limit, m")
    s.add_argument("--out", required=True, help="events as JSON lines")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("simulate", help="generate a synthetic RSSI trace")
    s.add_argument("--map", required=True, help="beacon map JSON")
    s.add_argument("--at", help="static receiver position X,Y in metres")
    s.add_argument("--walk", help="trajectory CSV t_ms,x_m,y_m")
    s.add_argument("--duration", type=int, help="duration in ms")
    s.add_argument("--max-range", type=float, help="beacons farther than this (m) are not heard")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="trace CSV to write")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("replicate", help="rerun a bench experiment in simulation")
    s.add_argument("experiment", choices=("proximity", "localization", "detection"))
    s.add_argument("--env", choices=("lab", "corridor"), default="lab")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trials", type=int, default=20, help="independent trials; tables report medians")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_replicate)

    s = sub.add_parser("analyze", help="retention report, visitor path and recommendations")
    s.add_argument("--events", required=True, help="events JSON lines")
    s.add_argument("--from", dest="start", type=int, required=True, help="interval start, ms (inclusive)")
    s.add_argument("--to", dest="end", type=int, required=True, help="interval end, ms (exclusive)")
    s.add_argument("--visitor", help="also report this visitor's path and recommendations")
    s.add_argument("--catalog", help="comma-separated beacon ids to recommend from (default: all seen)")
    s.add_argument("--limit", type=int, default=3, help="number of recommendations")
    s.add_argument("--out", required=True, help="report JSON to write")
    s.set_defaults(func=cmd_analyze)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        for name in ("window", "trials", "duration", "limit"):
            value = getattr(args, name, None)
            if value is not None and value < 1:
                parser.error(f"--{name} must be >= 1")
        if getattr(args, "max_range", None) is not None and not args.max_range > 0:
            parser.error("--max-range must be > 0")
    except SystemExit as exc:  # argparse reports usage problems (and --help) by exiting
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ingest_io.FormatError, ValidationError, InsufficientAnchorsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal failure", exc_info=True)
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
