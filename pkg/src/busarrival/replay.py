"""Time-ordered historical replay scoring the hybrid estimator against the forest.

Each test traversal is predicted at its own start time. Traversals enter the
probe store as completion events, so a prediction at instant ``t`` can only
see traversals that finished strictly before ``t``.

Rows predicted without any preceding bus in the window form a separate
``fallback`` stratum; the ``headline`` stratum holds only rows with a probe,
and ``all`` holds everything.
"""
from __future__ import annotations

import csv
import heapq
import os
from collections import OrderedDict, defaultdict
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from busarrival.boosting import BoostedForest, traversal_features
from busarrival.calibration import r_squared
from busarrival.hybrid import (DEFAULT_WINDOW_S, HybridWeights, PrecedingTripStore, adjusted_travel_time,
                               probe_time, select_preceding)
from busarrival.route import Route

STRATA = ("headline", "fallback", "all")
MODELS = ("forest", "hybrid")

SECTION_COLUMNS = ["trip_id", "section_id", "spatial_class", "section_start_time", "actual_s", "ftt_s",
                   "hybrid_att_s", "used_fallback", "probe_trip_id", "probe_start_time"]
TRIP_COLUMNS = ["trip_id", "n_sections", "n_fallback", "actual_total_s", "forest_total_s", "hybrid_total_s",
                "forest_mean_abs_error_s", "hybrid_mean_abs_error_s"]
SUMMARY_COLUMNS = ["stratum", "spatial_class", "model", "n", "r2", "mae_s"]


@dataclass(frozen=True)
class ReplayRow:
    trip_id: str
    section_id: int
    spatial_class: str
    section_start_time: datetime
    actual_s: float
    ftt_s: float
    hybrid_att_s: float
    used_fallback: bool
    probe_trip_id: str | None = None
    probe_start_time: datetime | None = None

    @property
    def prediction_time(self) -> datetime:
        return self.section_start_time


@dataclass(frozen=True)
class Score:
    stratum: str
    spatial_class: str
    model: str
    n: int
    r2: float | None
    mae_s: float | None


@dataclass
class ReplayResult:
    rows: list[ReplayRow] = field(default_factory=list)
    summary: list[Score] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)

    def score(self, stratum: str, spatial_class: str, model: str) -> Score | None:
        for s in self.summary:
            if (s.stratum, s.spatial_class, s.model) == (stratum, spatial_class, model):
                return s
        return None


def replay(test, forest: BoostedForest, weights: HybridWeights, route: Route, history=(),
           window_s: float = DEFAULT_WINDOW_S) -> ReplayResult:
    """Replay ``test`` traversals in time order; ``history`` seeds the probe store."""
    result = ReplayResult()
    test = sorted(test, key=lambda t: (t.section_start_time, t.trip_id, t.section_id))
    if not test:
        return result
    store = PrecedingTripStore()
    completions = []
    for seq, t in enumerate(list(history)):
        heapq.heappush(completions, (t.end_time, t.trip_id, t.section_id, seq, t))
    base = len(completions)
    for seq, t in enumerate(test):
        heapq.heappush(completions, (t.end_time, t.trip_id, t.section_id, base + seq, t))

    ftts = forest.predict_matrix(np.array([traversal_features(t).as_row() for t in test]))
    for t, ftt in zip(test, ftts):
        instant = t.section_start_time
        while completions and completions[0][0] < instant:
            store.add(heapq.heappop(completions)[-1])
        section = route.section(t.section_id)
        probe = select_preceding(store, t.section_id, instant, window_s)
        ftt = float(ftt)
        try:
            probe_s = probe_time(probe, section) if probe is not None else None
            att, fallback = adjusted_travel_time(ftt, probe_s, section, weights)
        except ValueError as exc:
            result.diagnostics.append(f"{t.trip_id} section {t.section_id}: {exc}")
            probe, att, fallback = None, ftt, True
        result.rows.append(ReplayRow(
            trip_id=t.trip_id,
            section_id=t.section_id,
            spatial_class=section.spatial_class.value,
            section_start_time=instant,
            actual_s=t.travel_time_s,
            ftt_s=ftt,
            hybrid_att_s=att,
            used_fallback=fallback,
            probe_trip_id=probe.trip_id if probe is not None else None,
            probe_start_time=probe.section_start_time if probe is not None else None,
        ))
    result.summary = summarize(result.rows)
    return result


def _score(stratum, spatial, model, actual, pred) -> Score:
    n = len(actual)
    if n == 0:
        return Score(stratum, spatial, model, 0, None, None)
    a = np.asarray(actual)
    p = np.asarray(pred)
    mae = float(np.mean(np.abs(a - p)))
    try:
        r2 = r_squared(a, p)
    except ValueError:
        r2 = None
    return Score(stratum, spatial, model, n, r2, mae)


def summarize(rows) -> list[Score]:
    groups = defaultdict(list)
    for r in rows:
        stratum = "fallback" if r.used_fallback else "headline"
        for s in (stratum, "all"):
            groups[(s, r.spatial_class)].append(r)
            groups[(s, "ALL")].append(r)
    out = []
    for stratum in STRATA:
        for spatial in ("NS", "SIS", "ALL"):
            g = groups.get((stratum, spatial), [])
            actual = [r.actual_s for r in g]
            out.append(_score(stratum, spatial, "forest", actual, [r.ftt_s for r in g]))
            out.append(_score(stratum, spatial, "hybrid", actual, [r.hybrid_att_s for r in g]))
    return out


@dataclass(frozen=True)
class TripTotal:
    trip_id: str
    n_sections: int
    n_fallback: int
    actual_total_s: float
    forest_total_s: float
    hybrid_total_s: float
    forest_mean_abs_error_s: float
    hybrid_mean_abs_error_s: float


def per_trip_totals(result: ReplayResult) -> list[TripTotal]:
    trips: OrderedDict[str, list[ReplayRow]] = OrderedDict()
    for r in result.rows:
        trips.setdefault(r.trip_id, []).append(r)
    out = []
    for trip_id, rows in trips.items():
        rows.sort(key=lambda r: r.section_id)
        n = len(rows)
        out.append(TripTotal(
            trip_id=trip_id,
            n_sections=n,
            n_fallback=sum(r.used_fallback for r in rows),
            actual_total_s=sum(r.actual_s for r in rows),
            forest_total_s=sum(r.ftt_s for r in rows),
            hybrid_total_s=sum(r.hybrid_att_s for r in rows),
            forest_mean_abs_error_s=sum(abs(r.ftt_s - r.actual_s) for r in rows) / n,
            hybrid_mean_abs_error_s=sum(abs(r.hybrid_att_s - r.actual_s) for r in rows) / n,
        ))
    return out


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, datetime):
        return v.isoformat(timespec="milliseconds")
    return v


def emit_report(result: ReplayResult, destination) -> dict[str, str]:
    """Write ``sections.csv``, ``trips.csv`` and ``summary.csv`` into ``destination``."""
    os.makedirs(destination, exist_ok=True)
    paths = {name: os.path.join(destination, f"{name}.csv") for name in ("sections", "trips", "summary")}
    tables = {
        "sections": (SECTION_COLUMNS, [[getattr(r, c) for c in SECTION_COLUMNS] for r in result.rows]),
        "trips": (TRIP_COLUMNS, [[getattr(t, c) for c in TRIP_COLUMNS] for t in per_trip_totals(result)]
                  if result.rows else []),
        "summary": (SUMMARY_COLUMNS, [[getattr(s, c) for c in SUMMARY_COLUMNS] for s in result.summary]),
    }
    for name, (header, rows) in tables.items():
        with open(paths[name], "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
    return paths
