"""Command-line pipeline: ingest, train, calibrate, predict, replay.

Exit codes:

* 0 success
* 1 outputs written, but with anomalies (rejected rows, omitted sections,
  uncalibrated classes, replay diagnostics)
* 2 fatal input error (missing or unreadable file, malformed document, bad
  argument value); nothing useful was written

Every threshold can be set in a YAML config file passed with ``--config``;
command-line flags take precedence over the file.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import yaml

from busarrival import avl, boosting, calibration, hybrid, replay, route as route_mod, synthetic

log = logging.getLogger("busarrival")

EXIT_OK = 0
EXIT_ANOMALIES = 1
EXIT_FATAL = 2


class FatalInput(Exception):
    """Input problem that stops the command with exit code 2."""


@dataclass
class PipelineConfig:
    route: str | None = None
    split: tuple[float, float, float] = (0.70, 0.15, 0.15)
    window_min: float = 30.0
    ingest: avl.IngestConfig = field(default_factory=avl.IngestConfig)
    train: boosting.TrainConfig = field(default_factory=boosting.TrainConfig)

    @property
    def window_s(self) -> float:
        return self.window_min * 60.0

    def load_route(self) -> route_mod.Route:
        if self.route is None:
            return route_mod.tumakuru_route()
        return route_mod.load_route_file(self.route)

    @classmethod
    def from_mapping(cls, doc: dict) -> "PipelineConfig":
        doc = dict(doc or {})
        unknown = set(doc) - {"route", "split", "window_min", "ingest", "train"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls()
        if "route" in doc:
            cfg.route = doc["route"]
        if "split" in doc:
            cfg.split = tuple(float(x) for x in doc["split"])
        if "window_min" in doc:
            cfg.window_min = float(doc["window_min"])
        if "ingest" in doc:
            cfg.ingest = avl.IngestConfig(**doc["ingest"])
        if "train" in doc:
            cfg.train = boosting.TrainConfig(**doc["train"])
        return cfg

    def to_mapping(self) -> dict:
        train = dataclasses.asdict(self.train)
        train.pop("objective")
        return {
            "route": self.route,
            "split": list(self.split),
            "window_min": self.window_min,
            "ingest": dataclasses.asdict(self.ingest),
            "train": train,
        }


# flag name -> (section, field, type)
_OVERRIDES = {
    "window_min": (None, "window_min", float),
    "geofence_radius_m": ("ingest", "geofence_radius_m", float),
    "max_speed_kmh": ("ingest", "max_speed_kmh", float),
    "bbox_pad_m": ("ingest", "bbox_pad_m", float),
    "max_gap_s": ("ingest", "max_gap_s", float),
    "n_estimators": ("train", "n_estimators", int),
    "max_depth": ("train", "max_depth", int),
    "learning_rate": ("train", "learning_rate", float),
    "alpha": ("train", "alpha", float),
    "reg_lambda": ("train", "reg_lambda", float),
    "colsample_bytree": ("train", "colsample_bytree", float),
    "rng_seed": ("train", "rng_seed", int),
}


def resolve_config(args) -> PipelineConfig:
    doc = {}
    if getattr(args, "config", None):
        try:
            doc = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise FatalInput(f"cannot read config: {exc}") from exc
        except yaml.YAMLError as exc:
            raise FatalInput(f"malformed config: {exc}") from exc
    try:
        cfg = PipelineConfig.from_mapping(doc)
    except (TypeError, ValueError) as exc:
        raise FatalInput(f"invalid config: {exc}") from exc
    if getattr(args, "route", None):
        cfg.route = args.route
    if getattr(args, "split", None):
        cfg.split = tuple(args.split)
    updates = {"ingest": {}, "train": {}}
    for name, (section, attr, _) in _OVERRIDES.items():
        value = getattr(args, name, None)
        if value is None:
            continue
        if section is None:
            setattr(cfg, attr, value)
        else:
            updates[section][attr] = value
    try:
        cfg.ingest = dataclasses.replace(cfg.ingest, **updates["ingest"])
        cfg.train = dataclasses.replace(cfg.train, **updates["train"])
    except ValueError as exc:
        raise FatalInput(str(exc)) from exc
    if not cfg.window_min > 0:
        raise FatalInput("window must be positive")
    return cfg


# --------------------------------------------------------------------------
# file helpers


def _route(cfg: PipelineConfig) -> route_mod.Route:
    try:
        return cfg.load_route()
    except OSError as exc:
        raise FatalInput(f"cannot read route config: {exc}") from exc
    except route_mod.RouteConfigError as exc:
        raise FatalInput(f"invalid route config: {exc}") from exc


def _read_traversals(path) -> list[avl.SectionTraversal]:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            return avl.read_traversals(fh)
    except OSError as exc:
        raise FatalInput(f"cannot read traversals: {exc}") from exc
    except (ValueError, KeyError) as exc:
        raise FatalInput(f"malformed traversal file {path}: {exc}") from exc


def _read_model(path) -> boosting.BoostedForest:
    try:
        return boosting.load_model(Path(path).read_bytes())
    except OSError as exc:
        raise FatalInput(f"cannot read model: {exc}") from exc
    except boosting.ModelFormatError as exc:
        raise FatalInput(f"{path}: {exc}") from exc


def _read_report(path) -> calibration.CalibrationReport:
    try:
        return calibration.CalibrationReport.from_json(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise FatalInput(f"cannot read calibration report: {exc}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise FatalInput(f"{path}: {exc}") from exc


def _parent(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _split(cfg: PipelineConfig, traversals):
    try:
        return calibration.chronological_split(traversals, cfg.split)
    except ValueError as exc:
        raise FatalInput(str(exc)) from exc


# --------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    cfg = resolve_config(args)
    route = _route(cfg)
    texts = []
    for path in args.inputs:
        try:
            texts.append(Path(path).read_text(encoding="utf-8"))
        except (OSError, UnicodeDecodeError) as exc:
            raise FatalInput(f"cannot read {path}: {exc}") from exc
    try:
        traversals, diags, stats = avl.ingest(texts, route, cfg.ingest)
    except avl.AvlFormatError as exc:
        raise FatalInput(str(exc)) from exc
    with open(_parent(args.out), "w", encoding="utf-8", newline="") as fh:
        avl.write_traversals(traversals, fh)
    diag_path = args.diagnostics or str(Path(args.out).with_suffix(".diagnostics.csv"))
    with open(_parent(diag_path), "w", encoding="utf-8", newline="") as fh:
        avl.write_diagnostics(diags, fh)
    log.info("ingest: %d traversals, %d diagnostics, %s", len(traversals), len(diags), dict(sorted(stats.items())))
    serious = [d for d in diags if d.stage in ("parse", "match")]
    return EXIT_ANOMALIES if serious else EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    traversals = _read_traversals(args.traversals)
    train, _, _ = _split(cfg, traversals)
    if not train:
        raise FatalInput("training split is empty")
    dataset = [(boosting.traversal_features(t), t.travel_time_s) for t in train]
    history = []
    try:
        forest = boosting.fit(dataset, cfg.train, callback=lambda r, mse: history.append((r, mse)))
    except ValueError as exc:
        raise FatalInput(str(exc)) from exc
    _parent(args.out).write_bytes(boosting.save_model(forest))
    log_path = args.log or str(Path(args.out).with_suffix(".log.csv"))
    with open(_parent(log_path), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round", "train_mse"])
        for r, mse in history:
            writer.writerow([r, repr(mse)])
    log.info("train: %d rows, %d trees, final mse %.3f", len(train), len(forest.trees), history[-1][1])
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = resolve_config(args)
    route = _route(cfg)
    traversals = _read_traversals(args.traversals)
    forest = _read_model(args.model)
    train, cal, _ = _split(cfg, traversals)
    if not cal:
        raise FatalInput("calibration split is empty")
    route = route.with_dwell_times(avl.median_dwell(train, route))
    report = calibration.calibrate(cal, forest, route, history=train, window_s=cfg.window_s)
    report.split["train"] = calibration._span(train)
    _parent(args.out).write_text(report.to_json(), encoding="utf-8")
    for key, c in sorted(report.classes.items()):
        log.info("calibrate %s: x1=%.4f x2=%.4f w1=%.4f w2=%.4f", key, c.x1, c.x2, c.w1, c.w2)
    return EXIT_ANOMALIES if report.diagnostics else EXIT_OK


def _parse_when(text: str) -> datetime:
    try:
        return datetime.fromisoformat(text)
    except ValueError as exc:
        raise FatalInput(f"bad --at time {text!r}; expected ISO format such as 2021-03-01T15:14:00") from exc


def cmd_predict(args) -> int:
    cfg = resolve_config(args)
    report = _read_report(args.report)
    route = report.apply_dwell(_route(cfg))
    forest = _read_model(args.model)
    store = hybrid.PrecedingTripStore(_read_traversals(args.store) if args.store else ())
    when = _parse_when(args.at)
    try:
        route.section(args.from_section)
    except KeyError as exc:
        raise FatalInput(f"bad section id {args.from_section}") from exc
    records = hybrid.predict_downstream(route, args.from_section, when, forest, report.weights(), store,
                                        window_s=cfg.window_s)
    out = sys.stdout if args.out in (None, "-") else open(_parent(args.out), "w", encoding="utf-8", newline="")
    try:
        if args.format == "json":
            hybrid.write_predictions_json(records, out)
        else:
            hybrid.write_predictions_csv(records, out)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_ANOMALIES if any(r.note for r in records) else EXIT_OK


def cmd_replay(args) -> int:
    cfg = resolve_config(args)
    report = _read_report(args.report)
    route = report.apply_dwell(_route(cfg))
    forest = _read_model(args.model)
    traversals = _read_traversals(args.traversals)
    train, cal, test = _split(cfg, traversals)
    result = replay.replay(test, forest, report.weights(), route, history=train + cal, window_s=cfg.window_s)
    try:
        replay.emit_report(result, args.out)
    except OSError as exc:
        raise FatalInput(f"cannot write report: {exc}") from exc
    for s in result.summary:
        if s.stratum == "headline" and s.n:
            log.info("replay %s %-6s n=%d r2=%s mae=%.2f", s.spatial_class, s.model, s.n,
                     "n/a" if s.r2 is None else f"{s.r2:.4f}", s.mae_s)
    for msg in result.diagnostics:
        log.warning("replay: %s", msg)
    return EXIT_ANOMALIES if result.diagnostics else EXIT_OK


def cmd_simulate(args) -> int:
    route = _route(resolve_config(args))
    params = synthetic.SyntheticParams(n_trips=args.trips, seed=args.seed)
    plans = synthetic.generate_plans(route, params)
    runs = synthetic.simulate_fleet(route, plans, sample_s=args.sample_s)
    points = sorted((p for r in runs for p in r.points), key=lambda p: (p.timestamp, p.vehicle_id))
    with open(_parent(args.out), "w", encoding="utf-8", newline="") as fh:
        avl.write_avl_csv(points, fh)
    if args.truth:
        truth = []
        for plan in plans:
            truth.extend(synthetic.plan_traversals(plan, route))
        truth.sort(key=lambda t: (t.section_start_time, t.trip_id, t.section_id))
        with open(_parent(args.truth), "w", encoding="utf-8", newline="") as fh:
            avl.write_traversals(truth, fh)
    log.info("simulate: %d trips, %d AVL rows", len(plans), len(points))
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser, route=True):
    p.add_argument("--config", help="YAML pipeline config; flags override its values")
    if route:
        p.add_argument("--route", help="route config YAML (default: bundled Tumakuru route)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _split_flag(p):
    p.add_argument("--split", type=float, nargs=3, metavar=("TRAIN", "CAL", "TEST"),
                   help="chronological split ratios by trip start (default 0.70 0.15 0.15)")


def _window_flag(p):
    p.add_argument("--window-min", dest="window_min", type=float,
                   help="preceding-bus window in minutes (default 30)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="busarrival", description=__doc__.split("\n")[0],
                                     epilog="exit codes: 0 success, 1 anomalies with output, 2 fatal input error")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="raw AVL CSV logs to section traversals")
    p.add_argument("inputs", nargs="+", help="AVL CSV files with the Vehicle No/Date and Time/... header")
    p.add_argument("-o", "--out", required=True, help="traversal CSV to write")
    p.add_argument("--diagnostics", help="diagnostics CSV (default: <out>.diagnostics.csv)")
    p.add_argument("--geofence-radius-m", dest="geofence_radius_m", type=float, help="stop geofence radius (30)")
    p.add_argument("--max-speed-kmh", dest="max_speed_kmh", type=float, help="drop faster points (100)")
    p.add_argument("--bbox-pad-m", dest="bbox_pad_m", type=float, help="route bounding box padding (500)")
    p.add_argument("--max-gap-s", dest="max_gap_s", type=float, help="split streams at longer gaps (120)")
    _common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="fit the boosted-tree forecaster on the training split")
    p.add_argument("traversals", help="traversal CSV from ingest")
    p.add_argument("-o", "--out", required=True, help="model artifact (JSON) to write")
    p.add_argument("--log", help="per-round training MSE CSV (default: <out>.log.csv)")
    p.add_argument("--n-estimators", dest="n_estimators", type=int, help="number of trees (200)")
    p.add_argument("--max-depth", dest="max_depth", type=int, help="tree depth (3)")
    p.add_argument("--learning-rate", dest="learning_rate", type=float, help="shrinkage (0.05)")
    p.add_argument("--alpha", type=float, help="L1 leaf penalty (1.0)")
    p.add_argument("--reg-lambda", dest="reg_lambda", type=float, help="L2 leaf penalty (1.0)")
    p.add_argument("--colsample-bytree", dest="colsample_bytree", type=float, help="column fraction (0.6)")
    p.add_argument("--rng-seed", dest="rng_seed", type=int, help="column sampling seed (0)")
    _split_flag(p)
    _common(p, route=False)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="estimate fusion weights on the calibration split")
    p.add_argument("traversals", help="traversal CSV from ingest")
    p.add_argument("--model", required=True, help="model artifact from train")
    p.add_argument("-o", "--out", required=True, help="calibration report (JSON) to write")
    _split_flag(p)
    _window_flag(p)
    _common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("predict", help="arrival estimates from a section to the terminus")
    p.add_argument("--model", required=True, help="model artifact from train")
    p.add_argument("--report", required=True, help="calibration report from calibrate")
    p.add_argument("--store", help="traversal CSV of recent buses (probes)")
    p.add_argument("--at", required=True, help="current time, ISO format (2021-03-01T15:14:00)")
    p.add_argument("--from-section", dest="from_section", type=int, required=True, help="section the bus starts")
    p.add_argument("-o", "--out", help="output file (default stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="output format (csv)")
    _window_flag(p)
    _common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("replay", help="time-ordered replay of the test split, hybrid against forest")
    p.add_argument("traversals", help="traversal CSV from ingest")
    p.add_argument("--model", required=True, help="model artifact from train")
    p.add_argument("--report", required=True, help="calibration report from calibrate")
    p.add_argument("-o", "--out", required=True, help="directory for sections.csv, trips.csv, summary.csv")
    _split_flag(p)
    _window_flag(p)
    _common(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("simulate", help="write a seeded synthetic AVL log for the route")
    p.add_argument("-o", "--out", required=True, help="AVL CSV to write")
    p.add_argument("--truth", help="also write the true section traversals as CSV")
    p.add_argument("--trips", type=int, default=600, help="number of trips (600)")
    p.add_argument("--seed", type=int, default=2021, help="generator seed (2021)")
    p.add_argument("--sample-s", dest="sample_s", type=int, default=10, help="GPS sampling interval (10)")
    _common(p)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FatalInput as exc:
        print(f"busarrival {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
