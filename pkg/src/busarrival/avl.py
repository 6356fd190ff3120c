"""AVL log ingestion: parse, clean, split into trips and aggregate per section.

Raw logs are CSV with the header ``Vehicle No, Date and Time, Latitude,
Longitude, Odometer, Speed`` (comma or tab separated), timestamps formatted
``DD-MM-YYYY HH:MM:SS``, odometer in km and speed in km/h.

Section travel times use the arrival-to-arrival convention: section ``j`` runs
from the moment the bus enters the geofence of stop ``j`` to the moment it
enters the geofence of stop ``j + 1``, so the dwell at stop ``j`` belongs to
section ``j``. The first section starts when the bus leaves the origin
geofence, which keeps terminal layovers out of the data.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Iterable

import numpy as np

from busarrival.geo import haversine_array, local_xy
from busarrival.route import BusStop, LandUsePattern, Route

log = logging.getLogger(__name__)

AVL_COLUMNS = ["Vehicle No", "Date and Time", "Latitude", "Longitude", "Odometer", "Speed"]
AVL_TIME_FORMAT = "%d-%m-%Y %H:%M:%S"

TRAVERSAL_COLUMNS = [
    "trip_id",
    "vehicle_id",
    "section_id",
    "section_start_time",
    "travel_time_s",
    "dwell_time_s",
    "running_speed_mps",
    "day_of_week",
    "lup",
]


class AvlFormatError(ValueError):
    """The stream cannot be read as an AVL log at all (e.g. wrong header)."""


@dataclass(frozen=True)
class IngestConfig:
    max_speed_kmh: float = 100.0
    bbox_pad_m: float = 500.0
    max_gap_s: float = 120.0
    geofence_radius_m: float = 30.0
    # longest sampling interval across which a geofence crossing is interpolated
    max_crossing_gap_s: float = 30.0
    stationary_speed_kmh: float = 2.0


@dataclass(frozen=True)
class AvlPoint:
    vehicle_id: str
    timestamp: datetime
    latitude: float
    longitude: float
    odometer_km: float
    speed_kmh: float
    row: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Diagnostic:
    vehicle_id: str
    row: int
    stage: str
    reason: str


@dataclass(frozen=True)
class TripTrace:
    trip_id: str
    vehicle_id: str
    route_id: str
    direction: str  # "up" runs origin -> terminus, "down" the reverse
    points: tuple[AvlPoint, ...]


@dataclass(frozen=True)
class SectionTraversal:
    trip_id: str
    vehicle_id: str
    section_id: int
    section_start_time: datetime
    travel_time_s: float
    dwell_time_s: float
    running_speed_mps: float
    day_of_week: int
    lup: LandUsePattern

    @property
    def end_time(self) -> datetime:
        return self.section_start_time + timedelta(seconds=self.travel_time_s)

    @property
    def running_time_s(self) -> float:
        return self.travel_time_s - self.dwell_time_s


def make_traversal(trip_id, vehicle_id, section, start, travel_s, dwell_s) -> SectionTraversal:
    """Build a traversal whose running speed is derived from the section length."""
    if not travel_s > dwell_s:
        raise ValueError(f"section {section.section_id}: travel time must exceed dwell time")
    return SectionTraversal(
        trip_id=trip_id,
        vehicle_id=vehicle_id,
        section_id=section.section_id,
        section_start_time=start,
        travel_time_s=float(travel_s),
        dwell_time_s=float(dwell_s),
        running_speed_mps=section.length_m / (travel_s - dwell_s),
        day_of_week=start.weekday(),
        lup=section.lup,
    )


# --------------------------------------------------------------------------
# parsing


def _open_text(stream):
    if isinstance(stream, str):
        return io.StringIO(stream)
    return stream


def parse_avl_csv(stream) -> tuple[list[AvlPoint], list[Diagnostic]]:
    """Parse an AVL log. Malformed rows are reported, never silently dropped."""
    fh = _open_text(stream)
    header_line = fh.readline()
    if not header_line.strip():
        return [], []
    delimiter = "\t" if "\t" in header_line else ","
    header = [h.strip() for h in next(csv.reader([header_line], delimiter=delimiter))]
    if header != AVL_COLUMNS:
        raise AvlFormatError(f"header mismatch: expected {AVL_COLUMNS}, got {header}")

    points, diags = [], []
    reader = csv.reader(fh, delimiter=delimiter, skipinitialspace=True)
    for offset, fields in enumerate(reader, start=2):
        if not fields or all(not f.strip() for f in fields):
            continue
        vehicle = fields[0].strip()
        try:
            points.append(_parse_row(fields, offset))
        except ValueError as exc:
            diags.append(Diagnostic(vehicle, offset, "parse", str(exc)))
    return points, diags


def _number(text: str, name: str) -> float:
    text = text.strip()
    if not text:
        raise ValueError(f"missing {name}")
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"non-numeric {name}") from None
    if not math.isfinite(value):
        raise ValueError(f"non-finite {name}")
    return value


def _parse_row(fields: list[str], row: int) -> AvlPoint:
    if len(fields) != len(AVL_COLUMNS):
        raise ValueError(f"wrong field count ({len(fields)})")
    vehicle = fields[0].strip()
    if not vehicle:
        raise ValueError("missing vehicle id")
    stamp = fields[1].strip()
    if not stamp:
        raise ValueError("missing timestamp")
    try:
        ts = datetime.strptime(stamp, AVL_TIME_FORMAT)
    except ValueError:
        raise ValueError("bad timestamp") from None
    lat = _number(fields[2], "latitude")
    lon = _number(fields[3], "longitude")
    odo = _number(fields[4], "odometer")
    speed = _number(fields[5], "speed")
    if not -90 <= lat <= 90:
        raise ValueError("latitude out of range")
    if not -180 <= lon <= 180:
        raise ValueError("longitude out of range")
    if odo < 0:
        raise ValueError("negative odometer")
    if speed < 0:
        raise ValueError("negative speed")
    return AvlPoint(vehicle, ts, lat, lon, odo, speed, row)


def write_avl_csv(points: Iterable[AvlPoint], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(AVL_COLUMNS)
    for p in points:
        writer.writerow([
            p.vehicle_id,
            p.timestamp.strftime(AVL_TIME_FORMAT),
            f"{p.latitude:.7f}",
            f"{p.longitude:.7f}",
            f"{p.odometer_km:.2f}",
            f"{p.speed_kmh:g}",
        ])


# --------------------------------------------------------------------------
# cleaning


def _by_vehicle(points: Iterable[AvlPoint]) -> dict[str, list[AvlPoint]]:
    groups = defaultdict(list)
    for p in points:
        groups[p.vehicle_id].append(p)
    return {v: groups[v] for v in sorted(groups)}


def clean(points, route: Route, config: IngestConfig = IngestConfig(), stats: Counter | None = None):
    """Drop erroneous points; output is grouped by vehicle and strictly time-ordered.

    Removal counts are added to ``stats`` when given.
    """
    stats = stats if stats is not None else Counter()
    lat0, lon0, lat1, lon1 = route.bounding_box(config.bbox_pad_m)
    out = []
    for _, stream in _by_vehicle(points).items():
        last = None
        for p in stream:
            if p.speed_kmh > config.max_speed_kmh:
                stats["implausible_speed"] += 1
                continue
            if not (lat0 <= p.latitude <= lat1 and lon0 <= p.longitude <= lon1):
                stats["outside_bbox"] += 1
                continue
            if last is not None:
                if p.timestamp == last.timestamp:
                    stats["duplicate_timestamp"] += 1
                    continue
                if p.timestamp < last.timestamp:
                    stats["non_monotonic_time"] += 1
                    continue
                if p.odometer_km < last.odometer_km:
                    stats["odometer_decrease"] += 1
                    continue
            out.append(p)
            last = p
    removed = sum(stats.values())
    if removed:
        log.info("clean: removed %d points (%s)", removed, dict(sorted(stats.items())))
    return out


# --------------------------------------------------------------------------
# geofences


@dataclass
class _Visit:
    """One stay inside a stop geofence; times are seconds since the trace's first point."""

    enter: float | None
    exit: float | None = None
    enter_idx: int = 0  # index of the point starting the entering chord
    exit_idx: int = 0  # index of the point ending the exiting chord
    inside: list[int] = field(default_factory=list)


def _chord(a: AvlPoint, b: AvlPoint, stop: BusStop, radius: float):
    """Parameters (s1, s2) where the straight chord a->b meets the circle, or None."""
    ax, ay = local_xy(a.latitude, a.longitude, stop.latitude, stop.longitude)
    bx, by = local_xy(b.latitude, b.longitude, stop.latitude, stop.longitude)
    dx, dy = bx - ax, by - ay
    qa = dx * dx + dy * dy
    qb = ax * dx + ay * dy
    qc = ax * ax + ay * ay - radius * radius
    if qa == 0.0:
        return None
    disc = qb * qb - qa * qc
    if disc < 0:
        return None
    root = math.sqrt(disc)
    return (-qb - root) / qa, (-qb + root) / qa


def _visits(points, stop: BusStop, config: IngestConfig) -> list[_Visit]:
    radius = config.geofence_radius_m
    t0 = points[0].timestamp
    secs = [(p.timestamp - t0).total_seconds() for p in points]
    lat = np.array([p.latitude for p in points])
    lon = np.array([p.longitude for p in points])
    dist = haversine_array(lat, lon, stop.latitude, stop.longitude)
    ins = (dist <= radius).tolist()
    # a chord can only reach the circle if one end lies within radius + chord length
    hops = haversine_array(lat[:-1], lon[:-1], lat[1:], lon[1:])
    near = (np.minimum(dist[:-1], dist[1:]) <= radius + hops + 1.0).tolist()
    visits = []
    cur = _Visit(enter=None, enter_idx=0) if ins[0] else None
    if cur:
        cur.inside.append(0)
    for k in range(len(points) - 1):
        a_in, b_in = ins[k], ins[k + 1]
        dt = secs[k + 1] - secs[k]
        if dt > config.max_crossing_gap_s:
            # crossing time unknowable across a long sampling gap
            if a_in and not b_in:
                cur.exit, cur.exit_idx = None, k + 1
                visits.append(cur)
                cur = None
            elif b_in and not a_in:
                cur = _Visit(enter=None, enter_idx=k)
        else:
            roots = _chord(points[k], points[k + 1], stop, radius) if near[k] else None
            if a_in:
                if not b_in:
                    s2 = min(max(roots[1], 0.0), 1.0) if roots else 0.0
                    cur.exit, cur.exit_idx = secs[k] + s2 * dt, k + 1
                    visits.append(cur)
                    cur = None
            elif roots is not None and 0.0 <= roots[0] <= 1.0:
                cur = _Visit(enter=secs[k] + roots[0] * dt, enter_idx=k)
                if not b_in:
                    # passed through between two samples
                    cur.exit, cur.exit_idx = secs[k] + min(roots[1], 1.0) * dt, k + 1
                    visits.append(cur)
                    cur = None
            elif b_in:
                # numerically grazing entry; anchor at the inside sample
                cur = _Visit(enter=secs[k + 1], enter_idx=k)
        if b_in:
            cur.inside.append(k + 1)
    if cur is not None:
        cur.exit_idx = len(points) - 1
        visits.append(cur)
    return visits


def _stamp(t0: datetime, seconds: float) -> datetime:
    """Absolute time rounded to the millisecond."""
    return t0 + timedelta(milliseconds=round(seconds * 1000.0))


def infer_dwell(points, stationary_speed_kmh: float = 2.0) -> float:
    """Total duration of the maximal stationary runs in a geofence-bounded sub-trace."""
    total = 0.0
    run_start = run_end = None
    for p in points:
        if p.speed_kmh < stationary_speed_kmh:
            if run_start is None:
                run_start = p.timestamp
            run_end = p.timestamp
        elif run_start is not None:
            total += (run_end - run_start).total_seconds()
            run_start = None
    if run_start is not None:
        total += (run_end - run_start).total_seconds()
    return total


# --------------------------------------------------------------------------
# trips


def _chunks(stream: list[AvlPoint], max_gap_s: float) -> list[list[AvlPoint]]:
    chunks, cur = [], []
    for p in stream:
        if cur and (p.timestamp - cur[-1].timestamp).total_seconds() > max_gap_s:
            chunks.append(cur)
            cur = []
        cur.append(p)
    if cur:
        chunks.append(cur)
    return chunks


def segment_trips(points, route: Route, config: IngestConfig = IngestConfig(), diagnostics=None):
    """Cut cleaned per-vehicle streams into origin->terminus runs in either direction.

    A run starts when the bus leaves one terminal geofence and ends when it
    next enters the other; layovers and deadheads fall outside every trace.
    """
    origin, terminus = route.stops[0], route.stops[-1]
    traces = []
    for vehicle, stream in _by_vehicle(points).items():
        assigned = 0
        for chunk in _chunks(stream, config.max_gap_s):
            if len(chunk) < 2:
                continue
            t0 = chunk[0].timestamp
            events = []
            for v in _visits(chunk, origin, config):
                events.append((v.enter, 0, "o_in", v))
                events.append((v.exit, 1, "o_out", v))
            for v in _visits(chunk, terminus, config):
                events.append((v.enter, 0, "t_in", v))
                events.append((v.exit, 1, "t_out", v))
            # an event with an unknown time breaks any open run
            events = _order_events(events)
            pending = None
            for when, kind, visit in events:
                if when is None:
                    pending = None
                    continue
                if kind == "o_out":
                    pending = ("up", when, visit.exit_idx - 1)
                elif kind == "t_out":
                    pending = ("down", when, visit.exit_idx - 1)
                elif pending and (kind, pending[0]) in (("t_in", "up"), ("o_in", "down")):
                    direction, start, first_idx = pending
                    last_idx = visit.enter_idx + 1
                    pts = tuple(chunk[first_idx:last_idx + 1])
                    assigned += len(pts)
                    begin = _stamp(t0, start)
                    traces.append(TripTrace(
                        trip_id=f"{vehicle}_{begin:%Y%m%dT%H%M%S}_{direction}",
                        vehicle_id=vehicle,
                        route_id=route.route_id,
                        direction=direction,
                        points=pts,
                    ))
                    pending = None
                else:
                    pending = None
        unassigned = len(stream) - assigned
        if diagnostics is not None and unassigned > 0:
            diagnostics.append(Diagnostic(vehicle, 0, "segment", f"{unassigned} points outside any trip"))
    return traces


def _order_events(events):
    """Time-order geofence events by the sample index that produced them."""
    keyed = []
    for when, tie, kind, visit in events:
        if kind.endswith("_in"):
            idx = visit.enter_idx
            # an entry of unknown time precedes anything else at its sample
            order = -math.inf if when is None else when
        else:
            idx = visit.exit_idx - 1
            order = math.inf if when is None else when
        keyed.append(((idx, order, tie), (when, kind, visit)))
    keyed.sort(key=lambda kv: kv[0])
    return [e for _, e in keyed]


def match_stop_passages(trace: TripTrace, route: Route, config: IngestConfig = IngestConfig(),
                        diagnostics=None) -> list[SectionTraversal]:
    """Aggregate one up-direction trace into per-section traversals.

    A stop whose geofence crossing cannot be interpolated leaves a gap; both
    sections touching that stop are omitted and a diagnostic is recorded.
    """
    if trace.direction != "up":
        raise ValueError(f"trace {trace.trip_id} runs {trace.direction}; route is defined origin->terminus")
    pts = trace.points
    t0 = pts[0].timestamp
    stops = route.stops

    def report(reason):
        if diagnostics is not None:
            diagnostics.append(Diagnostic(trace.vehicle_id, 0, "match", f"{trace.trip_id}: {reason}"))

    passages: list[float | None] = []
    visits_used: list[_Visit | None] = []
    origin_visits = [v for v in _visits(pts, stops[0], config) if v.exit is not None]
    if not origin_visits:
        report("no departure from origin")
        return []
    passages.append(origin_visits[0].exit)
    visits_used.append(None)
    horizon = origin_visits[0].exit
    for k, stop in enumerate(stops[1:], start=2):
        nxt = next((v for v in _visits(pts, stop, config) if _visit_time(pts, v) > horizon), None)
        if nxt is None or nxt.enter is None:
            report(f"gap at stop {k}")
            passages.append(None)
            visits_used.append(None)
            if nxt is not None:
                horizon = _visit_time(pts, nxt)
            continue
        passages.append(nxt.enter)
        visits_used.append(nxt)
        horizon = nxt.enter

    out = []
    for sec in route:
        j = sec.section_id
        a, b = passages[j - 1], passages[j]
        if a is None or b is None:
            continue
        start, end = _stamp(t0, a), _stamp(t0, b)
        travel = (end - start).total_seconds()
        visit = visits_used[j - 1]
        dwell = 0.0
        if visit is not None:
            dwell = infer_dwell([pts[i] for i in visit.inside], config.stationary_speed_kmh)
        if not travel > dwell:
            report(f"section {j}: non-positive running time")
            continue
        out.append(make_traversal(trace.trip_id, trace.vehicle_id, sec, start, travel, dwell))
    return out


def _visit_time(points, visit: _Visit) -> float:
    if visit.enter is not None:
        return visit.enter
    idx = min(visit.enter_idx + 1, len(points) - 1)
    return (points[idx].timestamp - points[0].timestamp).total_seconds()


def ingest(streams, route: Route, config: IngestConfig = IngestConfig()):
    """Full raw-log-to-traversal pipeline over one or more CSV streams.

    Returns ``(traversals, diagnostics, stats)``; traversals are sorted by
    start time then trip id, diagnostics by vehicle id then row number.
    """
    points, diags = [], []
    row_base = 0
    for stream in streams:
        pts, d = parse_avl_csv(stream)
        if row_base:
            pts = [AvlPoint(p.vehicle_id, p.timestamp, p.latitude, p.longitude, p.odometer_km,
                            p.speed_kmh, p.row + row_base) for p in pts]
            d = [Diagnostic(x.vehicle_id, x.row + row_base, x.stage, x.reason) for x in d]
        points.extend(pts)
        diags.extend(d)
        row_base += max([p.row for p in pts] + [x.row for x in d] + [0])
    stats = Counter()
    cleaned = clean(points, route, config, stats)
    traces = segment_trips(cleaned, route, config, diags)
    stats["traces_up"] = sum(t.direction == "up" for t in traces)
    stats["traces_down"] = sum(t.direction == "down" for t in traces)
    traversals = []
    for trace in traces:
        if trace.direction == "up":
            traversals.extend(match_stop_passages(trace, route, config, diags))
    traversals.sort(key=lambda t: (t.section_start_time, t.trip_id, t.section_id))
    diags.sort(key=lambda d: (d.vehicle_id, d.row, d.stage, d.reason))
    return traversals, diags, stats


def median_dwell(traversals, route: Route) -> dict[int, float]:
    """Per-section median of observed dwell, used as the standard dwell constant."""
    by_section = defaultdict(list)
    for t in traversals:
        by_section[t.section_id].append(t.dwell_time_s)
    return {s.section_id: float(statistics.median(by_section[s.section_id]))
            for s in route if by_section.get(s.section_id)}


# --------------------------------------------------------------------------
# traversal interchange CSV


def write_traversals(traversals: Iterable[SectionTraversal], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(TRAVERSAL_COLUMNS)
    for t in traversals:
        writer.writerow([
            t.trip_id,
            t.vehicle_id,
            t.section_id,
            t.section_start_time.isoformat(timespec="milliseconds"),
            repr(t.travel_time_s),
            repr(t.dwell_time_s),
            repr(t.running_speed_mps),
            t.day_of_week,
            t.lup.value,
        ])


def read_traversals(stream) -> list[SectionTraversal]:
    fh = _open_text(stream)
    reader = csv.DictReader(fh)
    if reader.fieldnames is None:
        return []
    if reader.fieldnames != TRAVERSAL_COLUMNS:
        raise AvlFormatError(f"traversal header mismatch: {reader.fieldnames}")
    out = []
    for row in reader:
        start = datetime.fromisoformat(row["section_start_time"])
        out.append(SectionTraversal(
            trip_id=row["trip_id"],
            vehicle_id=row["vehicle_id"],
            section_id=int(row["section_id"]),
            section_start_time=start,
            travel_time_s=float(row["travel_time_s"]),
            dwell_time_s=float(row["dwell_time_s"]),
            running_speed_mps=float(row["running_speed_mps"]),
            day_of_week=int(row["day_of_week"]),
            lup=LandUsePattern.parse(row["lup"]),
        ))
    return out


def write_diagnostics(diags: Iterable[Diagnostic], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["vehicle_id", "row", "stage", "reason"])
    for d in diags:
        writer.writerow([d.vehicle_id, d.row, d.stage, d.reason])
