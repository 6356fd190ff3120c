"""Per-class fusion weights from forecast R-squared and probe correlation."""
from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np

from busarrival.avl import SectionTraversal
from busarrival.boosting import BoostedForest, traversal_features
from busarrival.hybrid import (DEFAULT_WINDOW_S, HybridWeights, PrecedingTripStore, select_preceding,
                               weights_from_statistics)
from busarrival.route import Route, SpatialClass

log = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = 1


def r_squared(actual, predicted) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot`` around the mean of ``actual``."""
    p = np.asarray(actual, dtype=np.float64)
    f = np.asarray(predicted, dtype=np.float64)
    if p.shape != f.shape or p.ndim != 1 or len(p) == 0:
        raise ValueError("actual and predicted must be equal-length non-empty series")
    ss_tot = float(np.sum((p - p.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("degenerate targets: actual values have zero variance")
    return 1.0 - float(np.sum((p - f) ** 2)) / ss_tot


def pearson_correlation(current, preceding) -> float:
    a = np.asarray(current, dtype=np.float64)
    b = np.asarray(preceding, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("series must have equal length >= 2")
    da = a - a.mean()
    db = b - b.mean()
    saa = float(np.dot(da, da))
    sbb = float(np.dot(db, db))
    if saa == 0.0 or sbb == 0.0:
        raise ValueError("degenerate series: zero variance")
    r = float(np.dot(da, db)) / math.sqrt(saa * sbb)
    return min(1.0, max(-1.0, r))


def compute_weights(x1: float, x2: float) -> tuple[float, float]:
    """``(x1 / (x1 + x2), x2 / (x1 + x2))``; the second weight is taken as ``1 - w1``."""
    if x1 + x2 == 0:
        raise ValueError("x1 + x2 must be non-zero")
    if x1 <= 0 or x2 <= 0:
        raise ValueError("compute_weights expects positive x1 and x2")
    w1 = x1 / (x1 + x2)
    return w1, 1.0 - w1


def chronological_split(traversals, ratios=(0.70, 0.15, 0.15)):
    """Split whole trips into train/calibration/test by trip start time."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise ValueError("ratios must be three non-negative fractions summing to 1")
    starts = {}
    for t in traversals:
        if t.trip_id not in starts or t.section_start_time < starts[t.trip_id]:
            starts[t.trip_id] = t.section_start_time
    trips = sorted(starts, key=lambda k: (starts[k], k))
    n = len(trips)
    n_train = round(ratios[0] * n)
    n_cal = round((ratios[0] + ratios[1]) * n) - n_train
    part = {}
    for i, trip in enumerate(trips):
        part[trip] = 0 if i < n_train else (1 if i < n_train + n_cal else 2)
    out = ([], [], [])
    for t in traversals:
        out[part[t.trip_id]].append(t)
    return out


def probe_pairs(traversals, store: PrecedingTripStore, window_s: float = DEFAULT_WINDOW_S):
    """(current, preceding) pairs: each traversal with the latest finished traversal before it."""
    pairs = []
    for t in traversals:
        prev = select_preceding(store, t.section_id, t.section_start_time, window_s)
        if prev is not None:
            pairs.append((t, prev))
    return pairs


@dataclass
class ClassCalibration:
    spatial_class: str
    x1: float
    x2: float
    w1: float
    w2: float
    n_rows: int
    n_pairs: int
    mean_actual_s: float
    mean_current_s: float
    mean_preceding_s: float


@dataclass
class CalibrationReport:
    classes: dict = field(default_factory=dict)  # SpatialClass.value -> ClassCalibration
    split: dict = field(default_factory=dict)
    window_s: float = DEFAULT_WINDOW_S
    diagnostics: list = field(default_factory=list)
    dwell_s: dict = field(default_factory=dict)  # section_id -> standard dwell used for DTT

    def apply_dwell(self, route: Route) -> Route:
        """``route`` with the standard dwell constants recorded at calibration time."""
        return route.with_dwell_times(self.dwell_s) if self.dwell_s else route

    def weights(self) -> HybridWeights:
        return HybridWeights({SpatialClass(k): weights_from_statistics(c.x1, c.x2)
                              for k, c in self.classes.items()})

    def to_json(self) -> str:
        doc = {
            "format_version": REPORT_FORMAT_VERSION,
            "window_s": self.window_s,
            "split": self.split,
            "classes": {k: asdict(v) for k, v in sorted(self.classes.items())},
            "dwell_s": {str(k): v for k, v in sorted(self.dwell_s.items())},
            "diagnostics": list(self.diagnostics),
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CalibrationReport":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError("malformed calibration report") from exc
        if doc.get("format_version") != REPORT_FORMAT_VERSION:
            raise ValueError(f"unsupported calibration report version {doc.get('format_version')!r}")
        classes = {k: ClassCalibration(**v) for k, v in doc["classes"].items()}
        dwell = {int(k): float(v) for k, v in doc.get("dwell_s", {}).items()}
        return cls(classes, doc.get("split", {}), float(doc.get("window_s", DEFAULT_WINDOW_S)),
                   list(doc.get("diagnostics", [])), dwell)


def _span(traversals) -> dict:
    if not traversals:
        return {"trips": 0, "first": None, "last": None}
    starts = [t.section_start_time for t in traversals]
    return {
        "trips": len({t.trip_id for t in traversals}),
        "first": min(starts).isoformat(timespec="seconds"),
        "last": max(starts).isoformat(timespec="seconds"),
    }


def calibrate(traversals: list[SectionTraversal], forest: BoostedForest, route: Route,
              history=(), window_s: float = DEFAULT_WINDOW_S) -> CalibrationReport:
    """Estimate x1, x2 and the fusion weights for each spatial class.

    ``traversals`` is the calibration split; ``history`` (typically the
    training split) only supplies preceding-trip probes for its earliest rows.
    """
    report = CalibrationReport(window_s=window_s, split={"calibration": _span(traversals)},
                               dwell_s={s.section_id: s.dwell_time_s for s in route})
    store = PrecedingTripStore(list(history) + list(traversals))
    rows = defaultdict(list)
    for t in traversals:
        rows[route.section(t.section_id).spatial_class].append(t)

    for spatial in SpatialClass:
        group = rows.get(spatial, [])
        if not group:
            report.diagnostics.append(f"{spatial.value}: no calibration rows")
            continue
        actual = np.array([t.travel_time_s for t in group])
        X = np.array([traversal_features(t).as_row() for t in group])
        try:
            x1 = r_squared(actual, forest.predict_matrix(X))
        except ValueError as exc:
            report.diagnostics.append(f"{spatial.value}: {exc}")
            continue
        pairs = probe_pairs(group, store, window_s)
        if len(pairs) < 2:
            report.diagnostics.append(f"{spatial.value}: fewer than 2 probe pairs")
            continue
        cur = np.array([c.travel_time_s for c, _ in pairs])
        pre = np.array([p.travel_time_s for _, p in pairs])
        try:
            x2 = pearson_correlation(cur, pre)
        except ValueError as exc:
            report.diagnostics.append(f"{spatial.value}: {exc}")
            continue
        cw = weights_from_statistics(x1, x2)
        report.classes[spatial.value] = ClassCalibration(
            spatial_class=spatial.value,
            x1=x1,
            x2=x2,
            w1=cw.w1,
            w2=cw.w2,
            n_rows=len(group),
            n_pairs=len(pairs),
            mean_actual_s=float(actual.mean()),
            mean_current_s=float(cur.mean()),
            mean_preceding_s=float(pre.mean()),
        )
    for msg in report.diagnostics:
        log.warning("calibration: %s", msg)
    return report
