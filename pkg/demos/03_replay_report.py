"""
Replay a test period and score both predictors
==============================================

Walk the test trips in time order, predicting each section with the forest
alone and with the fused estimate, then write the three report files.
"""

import sys
import tempfile

from busarrival import avl, boosting, calibration, replay, synthetic
from busarrival.route import tumakuru_route

route = tumakuru_route()
traversals = synthetic.generate_traversals(route, synthetic.SyntheticParams())
train, cal, test = calibration.chronological_split(traversals)
route = route.with_dwell_times(avl.median_dwell(train, route))

forest = boosting.fit([(boosting.traversal_features(t), t.travel_time_s) for t in train])
report = calibration.calibrate(cal, forest, route, history=train)
result = replay.replay(test, forest, report.weights(), route, history=train + cal)

print("stratum   class  model    n     R2     MAE")
for s in result.summary:
    r2 = "   -  " if s.r2 is None else f"{s.r2:6.3f}"
    mae = "   -  " if s.mae_s is None else f"{s.mae_s:6.1f}"
    print(f"{s.stratum:<9} {s.spatial_class:<6} {s.model:<7} {s.n:>4} {r2} {mae}")

out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="replay_")
paths = replay.emit_report(result, out)
print("\nreports:", ", ".join(sorted(paths.values())))
