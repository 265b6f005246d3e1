"""File formats: RSSI traces (CSV), beacon maps (JSON), events (JSONL), reports.

Readers accept a path, a text or binary file object, or raw ``bytes``.
Every reader failure is a :class:`FormatError`.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from pathlib import Path
from typing import IO, Any, Iterable, Optional, Sequence, Union

from .analytics import VisitorId
from .core import BeaconMap, BeaconPlacement, PathLossModel, RssiSample, ValidationError, check_sorted
from .pathloss import FitResult
from .proximity import EventKind, ProximityEvent, Zone
from .simulator import CORRIDOR, LABORATORY, ExperimentReport

Source = Union[str, os.PathLike, IO, bytes]

TRACE_HEADER = ("timestamp_ms", "beacon_id", "rssi_dbm")
_EVENT_KINDS = {k.value for k in EventKind}
PRESETS = {"laboratory": LABORATORY.model, "lab": LABORATORY.model, "corridor": CORRIDOR.model}


class FormatError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        where = []
        if line is not None:
            where.append(f"line {line}")
        if path:
            where.append(path)
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


def _read_text(source: Source) -> str:
    if isinstance(source, bytes):
        data: Any = source
    elif isinstance(source, (str, os.PathLike)):
        data = Path(source).read_bytes()
    else:
        data = source.read()
    if isinstance(data, bytes):
        try:
            return data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"not valid UTF-8 text ({exc.reason} at byte {exc.start})") from None
    return data


def _write_text(text: str, dest: Union[str, os.PathLike, IO, None]) -> str:
    if dest is None:
        return text
    if isinstance(dest, (str, os.PathLike)):
        Path(dest).write_bytes(text.encode("utf-8"))
    elif isinstance(dest, io.TextIOBase):
        dest.write(text)
    else:
        dest.write(text.encode("utf-8"))
    return text


def _fmt(x: float) -> str:
    s = f"{x:.6f}"
    return "0.000000" if s == "-0.000000" else s


# -- traces ------------------------------------------------------------------


def _csv_field(value: str) -> str:
    # csv.writer leaves a lone "\r" unquoted when the terminator is "\n"
    if any(c in value for c in ',"\r\n'):
        return '"' + value.replace('"', '""') + '"'
    return value


def format_trace(samples: Iterable[RssiSample]) -> str:
    lines = [",".join(TRACE_HEADER)]
    lines += [f"{s.timestamp},{_csv_field(s.beacon)},{_fmt(s.rssi)}" for s in samples]
    return "\n".join(lines) + "\n"


def write_trace(samples: Iterable[RssiSample], dest=None) -> str:
    """Serialise ``samples``; reals carry 6 decimals. Returns the text."""
    return _write_text(format_trace(samples), dest)


def parse_trace(text: str) -> list[RssiSample]:
    try:
        rows = list(csv.reader(io.StringIO(text, newline="")))
    except csv.Error as exc:
        raise FormatError(f"malformed CSV: {exc}") from None
    if not rows or tuple(rows[0]) != TRACE_HEADER:
        raise FormatError(f"header must be {','.join(TRACE_HEADER)}", line=1)
    samples = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise FormatError(f"expected 3 columns, got {len(row)}", line=lineno)
        ts, beacon, rssi = row
        try:
            t = int(ts)
        except ValueError:
            raise FormatError(f"timestamp_ms {ts!r} is not an integer", line=lineno) from None
        try:
            r = float(rssi)
        except ValueError:
            raise FormatError(f"rssi_dbm {rssi!r} is not a number", line=lineno) from None
        try:
            samples.append(RssiSample(beacon, t, r))
        except ValidationError as exc:
            raise FormatError(exc.message, line=lineno, path=exc.path) from None
    try:
        check_sorted(samples)
    except ValidationError as exc:
        idx = int(exc.path[1:].split("]")[0])
        raise FormatError(exc.message, line=idx + 2, path="timestamp_ms") from None
    return samples


def read_trace(source: Source) -> list[RssiSample]:
    return parse_trace(_read_text(source))


# -- beacon maps ---------------------------------------------------------------


def _require(doc: dict, key: str, path: str, kind=(int, float)) -> Any:
    if key not in doc:
        raise FormatError("missing field", path=f"{path}{key}")
    value = doc[key]
    if kind is str:
        ok = isinstance(value, str)
    else:
        ok = isinstance(value, kind) and not isinstance(value, bool)
    if not ok:
        raise FormatError(f"wrong type {type(value).__name__}", path=f"{path}{key}")
    return value


def beacon_map_from_dict(doc: Any) -> BeaconMap:
    """Build a map from its JSON document.

    A preset ``environment.name`` (laboratory/lab/corridor) supplies any
    parameter the document leaves out.
    """
    if not isinstance(doc, dict):
        raise FormatError("document must be an object")
    env = doc.get("environment")
    if not isinstance(env, dict):
        raise FormatError("missing or invalid object", path="environment")
    name = env.get("name", "custom")
    if not isinstance(name, str):
        raise FormatError("wrong type", path="environment.name")
    preset = PRESETS.get(name)
    params = {}
    for field_name, key in (("n", "n"), ("rssi0", "rssi0_dbm"), ("d0", "d0_m"), ("sigma", "sigma_db")):
        if key in env:
            params[field_name] = _require(env, key, "environment.")
        elif preset is not None:
            params[field_name] = getattr(preset, field_name)
        elif key in ("n", "rssi0_dbm"):
            raise FormatError("missing field (no preset to fill it)", path=f"environment.{key}")
    try:
        model = PathLossModel(**params)
    except ValidationError as exc:
        raise FormatError(exc.message, path=f"environment.{exc.path}") from None

    beacons_doc = doc.get("beacons")
    if not isinstance(beacons_doc, list):
        raise FormatError("missing or invalid list", path="beacons")
    placements = []
    for i, b in enumerate(beacons_doc):
        p = f"beacons[{i}]."
        if not isinstance(b, dict):
            raise FormatError("must be an object", path=p[:-1])
        bid = _require(b, "id", p, str)
        x = _require(b, "x_m", p)
        y = _require(b, "y_m", p)
        adv = _require(b, "adv_interval_ms", p, int) if "adv_interval_ms" in b else 100
        tx = _require(b, "tx_power_dbm", p) if "tx_power_dbm" in b else 0.0
        if not 100 <= adv <= 10_000:
            raise FormatError(f"adv_interval_ms out of range: {adv}", path=p + "adv_interval_ms")
        if not -23 <= tx <= 0:
            raise FormatError(f"tx_power_dbm out of range: {tx}", path=p + "tx_power_dbm")
        try:
            placements.append(BeaconPlacement(bid, x, y, adv_interval=adv, tx_power=tx))
        except ValidationError as exc:
            raise FormatError(exc.message, path=p + exc.path) from None
    try:
        return BeaconMap(tuple(placements), model)
    except ValidationError as exc:
        raise FormatError(exc.message, path=exc.path) from None


def beacon_map_to_dict(beacon_map: BeaconMap, name: str = "custom") -> dict:
    env = beacon_map.environment
    return {
        "environment": {"name": name, "n": env.n, "rssi0_dbm": env.rssi0, "d0_m": env.d0, "sigma_db": env.sigma},
        "beacons": [
            {"id": p.beacon, "x_m": p.x, "y_m": p.y, "adv_interval_ms": p.adv_interval, "tx_power_dbm": p.tx_power}
            for p in beacon_map.beacons
        ],
    }


def _load_json(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    except RecursionError:
        raise FormatError("invalid JSON: nested too deeply") from None


def read_beacon_map(source: Source) -> BeaconMap:
    return beacon_map_from_dict(_load_json(_read_text(source)))


def write_beacon_map(beacon_map: BeaconMap, dest=None, name: str = "custom") -> str:
    return _write_text(json.dumps(beacon_map_to_dict(beacon_map, name), indent=2) + "\n", dest)


# -- events ------------------------------------------------------------------


def event_to_dict(event: ProximityEvent, visitor: Optional[VisitorId] = None) -> dict:
    return {
        "kind": event.kind.value,
        "visitor": visitor,
        "beacon": event.beacon,
        "zone": event.zone.name.lower(),
        "timestamp_ms": event.timestamp,
        "dwell_ms": event.dwell,
    }


def format_events(records: Iterable[tuple[Optional[VisitorId], ProximityEvent]]) -> str:
    return "".join(json.dumps(event_to_dict(e, v), sort_keys=True) + "\n" for v, e in records)


def write_events(records: Iterable[tuple[Optional[VisitorId], ProximityEvent]], dest=None) -> str:
    """One JSON object per line: kind, visitor, beacon, zone, timestamp_ms, dwell_ms."""
    return _write_text(format_events(records), dest)


def parse_events(text: str) -> list[tuple[Optional[VisitorId], ProximityEvent]]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc.msg}", line=lineno) from None
        except RecursionError:
            raise FormatError("invalid JSON: nested too deeply", line=lineno) from None
        if not isinstance(doc, dict):
            raise FormatError("record must be an object", line=lineno)
        kind = doc.get("kind")
        if kind not in _EVENT_KINDS:
            raise FormatError(f"unknown kind {kind!r}", line=lineno, path="kind")
        zone_name = doc.get("zone")
        if not isinstance(zone_name, str) or zone_name.upper() not in Zone.__members__:
            raise FormatError(f"unknown zone {zone_name!r}", line=lineno, path="zone")
        visitor = doc.get("visitor")
        if visitor is not None and (not isinstance(visitor, str) or not visitor):
            raise FormatError("visitor must be a non-empty string or null", line=lineno, path="visitor")
        ts = doc.get("timestamp_ms")
        dwell = doc.get("dwell_ms")
        try:
            event = ProximityEvent(EventKind(kind), doc.get("beacon"), Zone[zone_name.upper()], ts, dwell)
        except ValidationError as exc:
            raise FormatError(exc.message, line=lineno, path=exc.path) from None
        out.append((visitor, event))
    return out


def read_events(source: Source) -> list[tuple[Optional[VisitorId], ProximityEvent]]:
    return parse_events(_read_text(source))


# -- fitted models, reports ------------------------------------------------------


def fit_to_dict(fit: FitResult) -> dict:
    m = fit.model
    return {"n": m.n, "rssi0_dbm": m.rssi0, "d0_m": m.d0, "sigma_db": m.sigma, "rmse_db": fit.rmse,
            "point_count": fit.point_count}


def _round_floats(obj: Any) -> Any:
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return None
        return float(_fmt(obj))
    if isinstance(obj, dict):
        return {str(k): _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def dumps_json(doc: Any) -> str:
    """Canonical JSON: sorted keys, reals rounded to 6 decimals."""
    return json.dumps(_round_floats(doc), indent=2, sort_keys=True) + "\n"


def dumps_json_lines(docs: Iterable[Any]) -> str:
    """One canonical compact JSON object per line."""
    return "".join(json.dumps(_round_floats(d), sort_keys=True, separators=(",", ":")) + "\n" for d in docs)


def write_report(report: Union[ExperimentReport, dict], dest=None, include_series: bool = False) -> str:
    doc = report.to_dict() if isinstance(report, ExperimentReport) else dict(report)
    if not include_series:
        doc.pop("series", None)
    return _write_text(dumps_json(doc), dest)


def write_columns(header: Sequence[str], rows: Iterable[Sequence[Any]], dest=None) -> str:
    """Whitespace-free tab-separated columns for plotting tools."""
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(_fmt(v) if isinstance(v, float) else str(v) for v in row))
    return _write_text("\n".join(lines) + "\n", dest)
