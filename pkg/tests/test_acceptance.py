"""Acceptance checks. Each test prints one PASS/FAIL line for its criterion,
and the terminal summary aggregates them per criterion."""

import io
import random
import time
from dataclasses import replace
from datetime import timedelta
from fractions import Fraction

import numpy as np
import pytest

from busarrival import avl, boosting, calibration, replay, synthetic
from busarrival.boosting import TrainConfig, fit_arrays, leaf_weight
from busarrival.calibration import compute_weights, pearson_correlation, r_squared
from busarrival.cli import main
from busarrival.hybrid import PrecedingTripStore, select_preceding
from busarrival.route import tumakuru_route

from conftest import run_pipeline
from oracles import brute_pearson, brute_r_squared, exact_leaf, forest_mismatches


def _report(number, ok, detail=""):
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
    return ok


# --------------------------------------------------------------------------
# 1. reference weights


@pytest.mark.criterion(1, "weights round to the reference NS and SIS values")
def test_c1_normal_section_weights():
    w1, w2 = compute_weights(0.71, 0.55)
    got = (round(w1, 2), round(w2, 2))
    assert _report(1, got == (0.56, 0.44), f"NS weights {got}")


@pytest.mark.criterion(1, "weights round to the reference NS and SIS values")
@pytest.mark.xfail(strict=True, reason="0.40/(0.40+0.50) = 0.444 rounds to 0.44, not the reference 0.45")
def test_c1_signalized_section_weights():
    w1, w2 = compute_weights(0.40, 0.50)
    got = (round(w1, 2), round(w2, 2))
    assert _report(1, got == (0.45, 0.55), f"SIS weights {got}, expected (0.45, 0.55)")


# --------------------------------------------------------------------------
# 2. split search against the exhaustive oracle


def _tiny_problems(n=50, seed=11):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        rows = int(rng.integers(1, 9))
        X = np.column_stack([rng.integers(0, 4, rows), rng.integers(0, 5, rows), rng.integers(1, 4, rows),
                             rng.integers(0, 4, rows)]).astype(float)
        y = rng.integers(1, 60, rows).astype(float)
        cfg = TrainConfig(alpha=float(rng.integers(0, 2)), reg_lambda=float(rng.integers(0, 2)),
                          learning_rate=0.5, n_estimators=3, max_depth=int(rng.integers(1, 3)),
                          colsample_bytree=1.0)
        yield X, y, cfg


@pytest.mark.criterion(2, "every split equals exhaustive gain search on 50 tiny datasets")
def test_c2_splits_match_exhaustive_search():
    start = time.perf_counter()
    problems, splits = [], 0
    for X, y, cfg in _tiny_problems():
        forest = fit_arrays(X, y, cfg)
        problems += forest_mismatches(forest, X, y)
        splits += sum(f >= 0 for tree in forest.trees for f in tree.feature)
    elapsed = time.perf_counter() - start
    assert splits > 50
    assert _report(2, not problems and elapsed < 10, f"{splits} splits, {len(problems)} mismatches, {elapsed:.2f} s")


def test_c2_oracle_detects_wrong_split():
    X = np.array([[0, 0, 1, 0], [0, 0, 2, 0], [0, 0, 3, 0], [1, 0, 3, 0]], dtype=float)
    y = np.array([5.0, 9.0, 30.0, 31.0])
    forest = fit_arrays(X, y, TrainConfig(alpha=0, n_estimators=1, max_depth=1, colsample_bytree=1.0))
    assert forest_mismatches(forest, X, y) == []
    forest.trees[0].threshold[0] += 0.5
    assert forest_mismatches(forest, X, y)


# --------------------------------------------------------------------------
# 3. leaf weights


@pytest.mark.criterion(3, "leaf weights match the closed form within 1e-12")
def test_c3_leaf_weight_grid():
    worst = 0.0
    for g in range(-10, 11):
        for h in (1, 5, 10):
            for alpha in (0, 1):
                for lam in (0, 1):
                    want = exact_leaf(Fraction(g), Fraction(h), Fraction(alpha), Fraction(lam))
                    worst = max(worst, abs(leaf_weight(float(g), float(h), float(alpha), float(lam)) - float(want)))
    assert _report(3, worst <= 1e-12, f"max deviation {worst:.1e} over 252 grid points")


# --------------------------------------------------------------------------
# 4. statistics


def _random_series(rng):
    n = int(rng.integers(3, 101))
    kind = rng.integers(0, 4)
    x = rng.normal(rng.uniform(-1e3, 1e3), rng.uniform(0.1, 100), n)
    if kind == 0:
        y = x + rng.normal(0, rng.uniform(0.01, 50), n)
    elif kind == 1:
        y = rng.uniform(-5, 5) * x + rng.uniform(-1e4, 1e4)
    elif kind == 2:
        y = rng.normal(0, 1, n)
    else:
        x = 1e6 + rng.normal(0, 1, n)
        y = x + rng.normal(0, 1e-2, n)
    return list(x), list(y)


@pytest.mark.criterion(4, "R-squared and Pearson match brute force on 1,000 series")
def test_c4_statistics_against_brute_force():
    rng = np.random.default_rng(4)
    worst_r2 = worst_r = 0.0
    in_range = True
    for _ in range(1000):
        x, y = _random_series(rng)
        # R2 is unbounded below; past magnitude 1 the 1e-9 budget scales with it
        want = brute_r_squared(x, y)
        worst_r2 = max(worst_r2, abs(r_squared(x, y) - want) / max(1.0, abs(want)))
        r = pearson_correlation(x, y)
        worst_r = max(worst_r, abs(r - brute_pearson(x, y)))
        in_range &= -1 - 1e-12 <= r <= 1 + 1e-12
    ok = worst_r2 <= 1e-9 and worst_r <= 1e-9 and in_range
    assert _report(4, ok, f"max scaled |dR2| {worst_r2:.1e}, max |dr| {worst_r:.1e}, bounded {in_range}")


# --------------------------------------------------------------------------
# 5. hybrid beats the forest on correlated synthetic data


def _consecutive_correlation(traversals, route):
    store = PrecedingTripStore(traversals)
    per_section = []
    for sec in route:
        pairs = [(t.travel_time_s, p.travel_time_s) for t in traversals if t.section_id == sec.section_id
                 for p in [select_preceding(store, sec.section_id, t.section_start_time)] if p is not None]
        cur, pre = zip(*pairs)
        per_section.append(pearson_correlation(cur, pre))
    return float(np.mean(per_section))


@pytest.mark.criterion(5, "hybrid beats forest in both classes; NS more predictable than SIS")
def test_c5_hybrid_beats_forest():
    start = time.perf_counter()
    p = run_pipeline()
    elapsed = time.perf_counter() - start
    rho = _consecutive_correlation(p.traversals, p.route)
    lines, ok = [], True
    for stratum in ("headline", "all"):
        for cls in ("NS", "SIS"):
            f = p.result.score(stratum, cls, "forest")
            h = p.result.score(stratum, cls, "hybrid")
            good = h.r2 > f.r2 and h.mae_s < f.mae_s
            ok &= good
            lines.append(f"{stratum}/{cls} R2 {f.r2:.3f}->{h.r2:.3f} MAE {f.mae_s:.1f}->{h.mae_s:.1f}")
    x1 = {k: c.x1 for k, c in p.report.classes.items()}
    ok &= x1["NS"] > x1["SIS"]
    ok &= abs(rho - 0.7) <= 0.1
    ok &= elapsed < 60
    print("\n".join(lines))
    assert _report(5, ok, f"x1 NS {x1['NS']:.3f} > SIS {x1['SIS']:.3f}, consecutive r {rho:.3f}, {elapsed:.1f} s")


# --------------------------------------------------------------------------
# 6. no look-ahead


@pytest.mark.criterion(6, "future events never change an emitted prediction")
def test_c6_future_does_not_leak(pipeline):
    p = pipeline
    weights = p.report.weights()
    history = p.train + p.cal
    base = p.result.rows
    rng = random.Random(6)
    instants = sorted({t.section_start_time for t in p.test})
    changed = 0
    for cut in rng.sample(instants, 5):
        past = [t for t in p.test if t.section_start_time < cut]
        future = [t for t in p.test if t.section_start_time >= cut]
        # scramble what happens later: shuffled order and swapped travel times
        times = [t.travel_time_s for t in future]
        rng.shuffle(times)
        rewritten = [replace(t, travel_time_s=v) for t, v in zip(future, times)]
        mixed = past + rewritten
        rng.shuffle(mixed)
        got = replay.replay(mixed, p.forest, weights, p.route, history=history[::-1]).rows
        emitted = [r for r in base if r.section_start_time < cut]
        changed += got[: len(emitted)] != emitted
    known = {(t.trip_id, t.section_id): t for t in p.traversals}
    early = 0
    for r in base:
        if r.probe_trip_id is not None:
            probe = known[(r.probe_trip_id, r.section_id)]
            early += not (probe.section_start_time < r.prediction_time and probe.end_time < r.prediction_time)
    ok = changed == 0 and early == 0
    assert _report(6, ok, f"{changed} of 5 cut points changed, {early} probes not strictly earlier")


# --------------------------------------------------------------------------
# 7. end-to-end determinism


def _cli_pipeline(root):
    root.mkdir()
    steps = [
        ["simulate", "-o", str(root / "avl.csv"), "--trips", "150", "--seed", "77"],
        ["ingest", str(root / "avl.csv"), "-o", str(root / "traversals.csv")],
        ["train", str(root / "traversals.csv"), "-o", str(root / "model.json")],
        ["calibrate", str(root / "traversals.csv"), "--model", str(root / "model.json"),
         "-o", str(root / "calibration.json")],
        ["replay", str(root / "traversals.csv"), "--model", str(root / "model.json"),
         "--report", str(root / "calibration.json"), "-o", str(root / "replay")],
    ]
    for args in steps:
        assert main(args) == 0, args
    return {str(f.relative_to(root)): f.read_bytes() for f in sorted(root.rglob("*")) if f.is_file()}


@pytest.mark.criterion(7, "two end-to-end runs are byte-identical")
def test_c7_pipeline_is_deterministic(tmp_path):
    a = _cli_pipeline(tmp_path / "a")
    b = _cli_pipeline(tmp_path / "b")
    assert {"model.json", "calibration.json", "replay/sections.csv", "replay/summary.csv"} <= set(a)
    differing = [name for name in a if a[name] != b.get(name)]
    ok = set(a) == set(b) and not differing
    assert _report(7, ok, f"{len(a)} artifacts compared, differing: {differing or 'none'}")


# --------------------------------------------------------------------------
# 8. ingestion conservation and crossing accuracy


def _ms(delta: timedelta) -> int:
    return round(delta / timedelta(milliseconds=1))


def _ingest_against_truth(route, runs):
    buf = io.StringIO()
    avl.write_avl_csv(sorted((pt for r in runs for pt in r.points), key=lambda pt: pt.timestamp), buf)
    traversals, _, _ = avl.ingest([buf.getvalue()], route)
    trips = {}
    for t in traversals:
        trips.setdefault(t.trip_id, []).append(t)
    leaks, worst = 0, 0.0
    for trip in trips.values():
        trip.sort(key=lambda t: t.section_id)
        assert [t.section_id for t in trip] == list(range(1, 10))
        total = sum(round(t.travel_time_s * 1000) for t in trip)
        leaks += total != _ms(trip[-1].end_time - trip[0].section_start_time)
        run = min(runs, key=lambda r: abs(r.passages[0] - trip[0].section_start_time))
        crossings = [t.section_start_time for t in trip] + [trip[-1].end_time]
        worst = max(worst, max(abs((c - truth).total_seconds()) for c, truth in zip(crossings, run.passages)))
    return len(trips), leaks, worst


@pytest.mark.criterion(8, "section times sum exactly; crossings within one sampling interval")
def test_c8_conservation_and_crossings(route):
    plans = synthetic.generate_plans(route, synthetic.SyntheticParams(n_trips=30, seed=8))
    results = {}
    for events in (True, False):
        runs = synthetic.simulate_fleet(route, plans, event_samples=events)
        results[events] = _ingest_against_truth(route, runs)
    ok = all(n == 30 and leaks == 0 and worst < 10.0 for n, leaks, worst in results.values())
    detail = ", ".join(f"{'with' if e else 'without'} event samples: {n} trips, {leaks} leaks, "
                       f"max crossing error {w:.2f} s" for e, (n, leaks, w) in results.items())
    assert _report(8, ok, detail)


# --------------------------------------------------------------------------
# 9. performance


@pytest.mark.criterion(9, "training and replay fit the time budget")
def test_c9_performance():
    route = tumakuru_route()
    traversals = synthetic.generate_traversals(route, synthetic.SyntheticParams())
    X = np.array([boosting.traversal_features(t).as_row() for t in traversals])
    y = np.array([t.travel_time_s for t in traversals])
    assert X.shape == (5400, 4)
    start = time.perf_counter()
    forest = fit_arrays(X, y, TrainConfig(n_estimators=200, max_depth=3))
    fit_s = time.perf_counter() - start
    assert len(forest.trees) == 200

    report = calibration.calibrate(traversals, forest, route)
    start = time.perf_counter()
    result = replay.replay(traversals, forest, report.weights(), route)
    replay_s = time.perf_counter() - start
    assert len(result.rows) == 5400
    ok = fit_s < 5.0 and replay_s < 10.0
    assert _report(9, ok, f"fit 5,400 rows x 200 trees in {fit_s:.2f} s, replay 600 trips in {replay_s:.2f} s")
