"""Bus arrival time prediction from AVL logs.

Raw GPS logs become section traversals (:mod:`busarrival.avl`), a boosted
regression-tree forecaster is trained on them (:mod:`busarrival.boosting`), and
its forecast is fused with the travel time of the bus just ahead
(:mod:`busarrival.hybrid`) using weights estimated in
:mod:`busarrival.calibration`. :mod:`busarrival.replay` scores the result
without looking into the future.
"""
from busarrival.avl import SectionTraversal, ingest, read_traversals, write_traversals
from busarrival.boosting import BoostedForest, FeatureVector, TrainConfig, fit, load_model, predict, save_model
from busarrival.calibration import calibrate, compute_weights, pearson_correlation, r_squared
from busarrival.hybrid import (HybridWeights, PrecedingTripStore, adjusted_travel_time, bus_arrival_time,
                               predict_downstream, select_preceding)
from busarrival.replay import emit_report, per_trip_totals
from busarrival.route import LandUsePattern, Route, RouteSection, SpatialClass, load_route, tumakuru_route

__version__ = "0.1.0"

__all__ = [
    "BoostedForest", "FeatureVector", "HybridWeights", "LandUsePattern", "PrecedingTripStore", "Route",
    "RouteSection", "SectionTraversal", "SpatialClass", "TrainConfig", "adjusted_travel_time",
    "bus_arrival_time", "calibrate", "compute_weights", "emit_report", "fit", "ingest", "load_model",
    "load_route", "pearson_correlation", "per_trip_totals", "predict", "predict_downstream", "r_squared",
    "read_traversals", "save_model", "select_preceding", "tumakuru_route", "write_traversals",
]
