"""Hybrid arrival-time estimation from a forest forecast and preceding-bus probes.

For a section starting at time ``t`` the adjusted travel time is

* normal sections: ``w1 * FTT + w2 * PTT`` where PTT is the travel time of the
  most recent preceding bus on the section,
* signalized sections: ``w1 * FTT + w2 * DTT`` with
  ``DTT = length / running_speed + standard_dwell + intersection_delay``,

and the arrival at the section's end stop is ``current_time + ATT``. Without a
preceding bus inside the window the estimate falls back to the forecast.
"""
from __future__ import annotations

import bisect
import csv
import json
import logging
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Iterable

from busarrival.avl import SectionTraversal
from busarrival.boosting import BoostedForest, FeatureVector, predict
from busarrival.route import Route, RouteSection, SpatialClass

log = logging.getLogger(__name__)

DEFAULT_WINDOW_S = 30 * 60.0


class PrecedingTripStore:
    """Traversals indexed per section by start time.

    A traversal only counts as known once it has finished: lookups made at
    ``as_of`` see traversals whose end time is strictly earlier.
    """

    def __init__(self, traversals: Iterable[SectionTraversal] = ()):
        self._keys: dict[int, list] = {}
        self._items: dict[int, list] = {}
        for t in traversals:
            self.add(t)

    def add(self, t: SectionTraversal) -> None:
        key = (t.section_start_time, t.trip_id)
        keys = self._keys.setdefault(t.section_id, [])
        items = self._items.setdefault(t.section_id, [])
        pos = bisect.bisect_right(keys, key)
        keys.insert(pos, key)
        items.insert(pos, t)

    def __len__(self) -> int:
        return sum(len(v) for v in self._items.values())

    def query(self, section_id: int, t: datetime, as_of: datetime | None = None,
              window_s: float | None = None) -> list[SectionTraversal]:
        """Known traversals of ``section_id`` that started strictly before ``t``."""
        as_of = t if as_of is None else as_of
        keys = self._keys.get(section_id, [])
        items = self._items.get(section_id, [])
        hi = bisect.bisect_left(keys, (t, ""))
        lo = 0
        if window_s is not None:
            lo = bisect.bisect_right(keys, (t - timedelta(seconds=window_s), "\U0010ffff"))
        return [x for x in items[lo:hi] if x.section_start_time < t and x.end_time < as_of]


def select_preceding(store: PrecedingTripStore, section_id: int, t: datetime,
                     window_s: float = DEFAULT_WINDOW_S, as_of: datetime | None = None):
    """Latest known traversal with ``0 < t - start < window``, or None."""
    best = None
    for cand in store.query(section_id, t, as_of, window_s):
        lag = (t - cand.section_start_time).total_seconds()
        if 0 < lag < window_s and (best is None or cand.section_start_time >= best.section_start_time):
            best = cand
    return best


def preceding_running_time(traversal: SectionTraversal, section: RouteSection) -> float:
    if traversal.section_id != section.section_id:
        raise ValueError("traversal and section disagree on section_id")
    if not traversal.running_speed_mps > 0:
        raise ValueError("degenerate probe: non-positive running speed")
    return section.length_m / traversal.running_speed_mps


def dynamic_travel_time(prt_s: float, section: RouteSection) -> float:
    if not section.has_signalized_intersection:
        raise ValueError(f"section {section.section_id} has no signalized intersection")
    return prt_s + section.dwell_time_s + section.intersection_delay_s


def probe_time(traversal: SectionTraversal, section: RouteSection) -> float:
    """PTT for a normal section, DTT for a signalized one."""
    if section.has_signalized_intersection:
        return dynamic_travel_time(preceding_running_time(traversal, section), section)
    if traversal.section_id != section.section_id:
        raise ValueError("traversal and section disagree on section_id")
    return traversal.travel_time_s


@dataclass(frozen=True)
class ClassWeights:
    x1: float
    x2: float
    w1: float
    w2: float

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or self.w1 + self.w2 != 1.0:
            raise ValueError(f"weights must be non-negative and sum to 1, got {self.w1}, {self.w2}")


FOREST_ONLY = ClassWeights(x1=float("nan"), x2=float("nan"), w1=1.0, w2=0.0)


def weights_from_statistics(x1: float, x2: float) -> ClassWeights:
    """Fusion weights from model R-squared and probe correlation.

    Non-positive statistics cannot weight a convex mix: a non-positive
    correlation gives the forecast all the weight, a non-positive R-squared
    gives the probe all the weight.
    """
    if x2 <= 0 and x1 <= 0:
        log.warning("x1=%.3f and x2=%.3f both non-positive; using forecast only", x1, x2)
        return ClassWeights(x1, x2, 1.0, 0.0)
    if x2 <= 0:
        log.warning("probe correlation %.3f is non-positive; using forecast only", x2)
        return ClassWeights(x1, x2, 1.0, 0.0)
    if x1 <= 0:
        log.warning("model R-squared %.3f is non-positive; using probe only", x1)
        return ClassWeights(x1, x2, 0.0, 1.0)
    w1 = x1 / (x1 + x2)
    return ClassWeights(x1, x2, w1, 1.0 - w1)


@dataclass(frozen=True)
class HybridWeights:
    by_class: dict

    @classmethod
    def from_statistics(cls, stats: dict) -> "HybridWeights":
        return cls({c: weights_from_statistics(x1, x2) for c, (x1, x2) in stats.items()})

    def for_class(self, spatial: SpatialClass) -> ClassWeights:
        try:
            return self.by_class[spatial]
        except KeyError:
            log.warning("no calibrated weights for %s; using forecast only", spatial.value)
            return FOREST_ONLY

    def for_section(self, section: RouteSection) -> ClassWeights:
        return self.for_class(section.spatial_class)


def adjusted_travel_time(ftt_s: float, probe, section: RouteSection, weights) -> tuple[float, bool]:
    """Fuse a forecast with a probe; returns ``(att_s, used_fallback)``.

    ``probe`` is a preceding :class:`SectionTraversal`, an already derived
    PTT/DTT in seconds, or None.
    """
    if not ftt_s > 0:
        raise ValueError(f"non-positive FTT {ftt_s}")
    if probe is None:
        return ftt_s, True
    if isinstance(probe, SectionTraversal):
        probe = probe_time(probe, section)
    cw = weights.for_section(section) if isinstance(weights, HybridWeights) else weights
    return cw.w1 * ftt_s + cw.w2 * probe, False


def bus_arrival_time(c_time: datetime, att_s: float) -> datetime:
    if not att_s > 0:
        raise ValueError("travel time must be positive")
    return c_time + timedelta(seconds=att_s)


@dataclass(frozen=True)
class PredictionRecord:
    section_id: int
    c_time: datetime
    ftt_s: float
    probe_s: float | None
    att_s: float
    bat: datetime
    used_fallback: bool
    preceding_trip_id: str | None = None
    preceding_start_time: datetime | None = None
    note: str = ""


def predict_downstream(route: Route, start_section_id: int, c_time: datetime, forest: BoostedForest,
                       weights: HybridWeights, store: PrecedingTripStore,
                       window_s: float = DEFAULT_WINDOW_S) -> list[PredictionRecord]:
    """Arrival estimates at every stop from ``start_section_id`` to the terminus.

    Each section starts at the previous section's estimated arrival, but probe
    lookups are anchored at ``c_time`` for every section so nothing from after
    the present moment is consumed.
    """
    route.section(start_section_id)
    records = []
    now = c_time
    for section in route.sections[start_section_id - 1:]:
        note = ""
        ftt = predict(forest, FeatureVector.at(now, section.section_id, section.lup))
        probe = select_preceding(store, section.section_id, c_time, window_s)
        probe_s = None
        if probe is not None:
            try:
                probe_s = probe_time(probe, section)
            except ValueError as exc:
                note = str(exc)
                probe = None
        if ftt > 0:
            att, fallback = adjusted_travel_time(ftt, probe_s, section, weights)
        else:
            note = (note + "; " if note else "") + f"non-positive FTT {ftt:.3f}"
            att, fallback = (probe_s, False) if probe_s else (1.0, True)
        bat = bus_arrival_time(now, att)
        records.append(PredictionRecord(
            section_id=section.section_id,
            c_time=now,
            ftt_s=ftt,
            probe_s=probe_s,
            att_s=att,
            bat=bat,
            used_fallback=fallback,
            preceding_trip_id=probe.trip_id if probe is not None else None,
            preceding_start_time=probe.section_start_time if probe is not None else None,
            note=note,
        ))
        now = bat
    return records


PREDICTION_COLUMNS = ["section_id", "c_time", "ftt_s", "probe_s", "att_s", "bat", "used_fallback",
                      "preceding_trip_id", "preceding_start_time", "note"]


def _iso(t: datetime | None) -> str:
    return "" if t is None else t.isoformat(timespec="milliseconds")


def _record_dict(r: PredictionRecord) -> dict:
    return {
        "section_id": r.section_id,
        "c_time": _iso(r.c_time),
        "ftt_s": r.ftt_s,
        "probe_s": r.probe_s,
        "att_s": r.att_s,
        "bat": _iso(r.bat),
        "used_fallback": r.used_fallback,
        "preceding_trip_id": r.preceding_trip_id,
        "preceding_start_time": _iso(r.preceding_start_time) or None,
        "note": r.note,
    }


def write_predictions_csv(records: Iterable[PredictionRecord], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(PREDICTION_COLUMNS)
    for r in records:
        d = _record_dict(r)
        writer.writerow(["" if d[c] is None else (repr(d[c]) if isinstance(d[c], float) else d[c])
                         for c in PREDICTION_COLUMNS])


def write_predictions_json(records: Iterable[PredictionRecord], fh) -> None:
    json.dump([_record_dict(r) for r in records], fh, indent=1)
    fh.write("\n")
