"""
Forecast a trip and blend it with the bus ahead
===============================================

Fit the boosted forest on simulated history, derive the blending weights
from a held-out slice, then predict arrival times along the route for a
bus that is just leaving the first stop.
"""

from busarrival import avl, boosting, calibration, hybrid, synthetic
from busarrival.route import tumakuru_route

route = tumakuru_route()
traversals = synthetic.generate_traversals(route, synthetic.SyntheticParams(n_trips=300))
train, cal, test = calibration.chronological_split(traversals)
print(f"{len(train)} training rows, {len(cal)} calibration rows, {len(test)} test rows")

# standard dwell per section, measured on the training trips
route = route.with_dwell_times(avl.median_dwell(train, route))

forest = boosting.fit([(boosting.traversal_features(t), t.travel_time_s) for t in train])
report = calibration.calibrate(cal, forest, route, history=train)
for name, c in sorted(report.classes.items()):
    print(f"{name:>3}: R2={c.x1:.2f}  consecutive r={c.x2:.2f}  ->  w1={c.w1:.2f} w2={c.w2:.2f}")

###############################################################################
# Pick a real departure from the test slice and predict every downstream section.

departure = min((t for t in test if t.section_id == 1), key=lambda t: t.section_start_time)
store = hybrid.PrecedingTripStore(train + cal + test)
records = hybrid.predict_downstream(route, 1, departure.section_start_time, forest, report.weights(), store)

actual = {t.section_id: t.travel_time_s for t in test if t.trip_id == departure.trip_id}
print(f"\ntrip {departure.trip_id}")
print("sec  forest  probe   fused  actual  arrival")
for r in records:
    probe = "   -  " if r.probe_s is None else f"{r.probe_s:6.0f}"
    print(f"{r.section_id:>3}  {r.ftt_s:6.0f} {probe}  {r.att_s:6.0f}  {actual[r.section_id]:6.0f}  {r.bat:%H:%M:%S}")
