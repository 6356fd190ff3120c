from dataclasses import dataclass
from datetime import datetime, timedelta

import pytest

from busarrival import avl, boosting, calibration, replay, synthetic
from busarrival.geo import destination
from busarrival.route import BusStop, LandUsePattern, Route, RouteSection, tumakuru_route

ORIGIN = (13.34286, 77.09886)
T0 = datetime(2021, 3, 1, 7, 33, 37)


def straight_route(lengths, signals=(), lup=LandUsePattern.CBD) -> Route:
    """Stops due east of ORIGIN spaced by ``lengths`` meters."""
    stops = [BusStop(1, "S1", *ORIGIN)]
    for k, _ in enumerate(lengths):
        lat, lon = destination(*ORIGIN, 90.0, sum(lengths[: k + 1]))
        stops.append(BusStop(k + 2, f"S{k + 2}", lat, lon))
    sections = tuple(
        RouteSection(j + 1, stops[j], stops[j + 1], float(length), lup, (j + 1) in signals,
                     20.0 if (j + 1) in signals else 0.0)
        for j, length in enumerate(lengths)
    )
    return Route("TEST", sections)


def drive(schedule, vehicle="KA-06-F-0836", t0=T0, sample_s=10, odometer_km=100.0):
    """AVL points along the ORIGIN-east line.

    ``schedule`` is a list of ``(duration_s, speed_mps)`` legs starting at
    distance 0; speed 0 means standing still. A sample is taken every
    ``sample_s`` seconds and at every leg boundary.
    """
    legs, t, x = [], 0.0, 0.0
    for duration, speed in schedule:
        legs.append((t, t + duration, x, speed))
        t += duration
        x += duration * speed
    times = sorted(set(range(0, int(t) + 1, sample_s)) | {int(a) for a, *_ in legs} | {int(t)})
    points = []
    for s in times:
        leg = next(lg for lg in legs if lg[0] <= s <= lg[1])
        # a boundary sample belongs to the stationary leg if either side stands still
        stationary = any(lg[3] == 0 and lg[0] <= s <= lg[1] for lg in legs)
        pos = leg[2] + (s - leg[0]) * leg[3]
        lat, lon = destination(*ORIGIN, 90.0, pos)
        points.append(avl.AvlPoint(vehicle, t0 + timedelta(seconds=s), lat, lon,
                                   round(odometer_km + pos / 1000.0, 2), 0.0 if stationary else leg[3] * 3.6))
    return points


@pytest.fixture(scope="session")
def route():
    return tumakuru_route()


@dataclass
class Pipeline:
    route: Route
    traversals: list
    train: list
    cal: list
    test: list
    forest: boosting.BoostedForest
    report: calibration.CalibrationReport
    result: replay.ReplayResult


def run_pipeline(params=synthetic.SyntheticParams(), base_route=None) -> Pipeline:
    base_route = base_route or tumakuru_route()
    traversals = synthetic.generate_traversals(base_route, params)
    train, cal, test = calibration.chronological_split(traversals)
    route = base_route.with_dwell_times(avl.median_dwell(train, base_route))
    forest = boosting.fit([(boosting.traversal_features(t), t.travel_time_s) for t in train])
    report = calibration.calibrate(cal, forest, route, history=train)
    result = replay.replay(test, forest, report.weights(), route, history=train + cal)
    return Pipeline(route, traversals, train, cal, test, forest, report, result)


@pytest.fixture(scope="session")
def pipeline():
    return run_pipeline()


# --------------------------------------------------------------------------
# acceptance summary: one pass/fail line per criterion at the end of the run

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "results": []})
    if report.when == "call" or not report.passed:
        passed = report.passed and not hasattr(report, "wasxfail")
        entry["results"].append((item.name, passed))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        ok = all(p for _, p in entry["results"])
        failed = [name for name, p in entry["results"] if not p]
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {entry['title']}"
        if failed:
            line += f"  (failing: {', '.join(failed)})"
        terminalreporter.write_line(line)
