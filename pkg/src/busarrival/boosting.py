"""Regularized gradient-boosted regression trees for section travel times.

Squared-error objective with the loss written as ``0.5 * (pred - y) ** 2`` so
every row has gradient ``pred - y`` and hessian 1. Each tree is grown by exact
greedy search over midpoints of consecutive distinct feature values, scoring a
split by::

    gain = 0.5 * (S(G_L)^2 / (H_L + lambda) + S(G_R)^2 / (H_R + lambda)
                  - S(G)^2 / (H + lambda)) - gamma

where ``S(G) = sign(G) * max(|G| - alpha, 0)`` is the L1 soft threshold. Leaves
output ``-S(G) / (H + lambda)``.

Column subsampling draws ``ceil(colsample_bytree * 4)`` features per tree from
a PCG64 generator seeded with ``SeedSequence((rng_seed, tree_index))``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Callable, Sequence

import numpy as np

from busarrival.route import LandUsePattern

FEATURES = ("day_of_week", "start_time_s", "section_id", "lup_code")
N_FEATURES = len(FEATURES)
ARTIFACT_FORMAT = "busarrival-forest"
ARTIFACT_VERSION = 1


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureVector:
    day_of_week: int  # Monday = 0
    start_time_s: float  # seconds since local midnight
    section_id: int
    lup_code: int  # CBD, IC, ISU, OSU -> 0..3

    def __post_init__(self):
        if not 0 <= self.day_of_week <= 6:
            raise ValueError(f"day_of_week {self.day_of_week} outside 0..6")
        if not 0 <= self.start_time_s < 86400:
            raise ValueError(f"start_time_s {self.start_time_s} outside [0, 86400)")
        if self.section_id < 1:
            raise ValueError(f"section_id {self.section_id} must be >= 1")
        if not 0 <= self.lup_code <= 3:
            raise ValueError(f"lup_code {self.lup_code} outside 0..3")

    @classmethod
    def at(cls, when: datetime, section_id: int, lup: LandUsePattern) -> "FeatureVector":
        midnight = when.replace(hour=0, minute=0, second=0, microsecond=0)
        return cls(when.weekday(), (when - midnight).total_seconds(), section_id, lup.code)

    def as_row(self) -> tuple[float, float, float, float]:
        return (float(self.day_of_week), float(self.start_time_s), float(self.section_id), float(self.lup_code))


def traversal_features(t) -> FeatureVector:
    """Features of a :class:`~busarrival.avl.SectionTraversal` at its start time."""
    return FeatureVector.at(t.section_start_time, t.section_id, t.lup)


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    reg_lambda: float = 1.0
    learning_rate: float = 0.05
    n_estimators: int = 200
    colsample_bytree: float = 0.6
    max_depth: int = 3
    min_child_weight: float = 1.0
    gamma: float = 0.0
    rng_seed: int = 0
    objective: str = field(default="squared_error", init=False)

    def __post_init__(self):
        if not 0 < self.colsample_bytree <= 1:
            raise ValueError("colsample_bytree must lie in (0, 1]")
        if self.n_estimators < 0 or self.max_depth < 0:
            raise ValueError("n_estimators and max_depth must be non-negative")
        if self.alpha < 0 or self.reg_lambda < 0:
            raise ValueError("regularization terms must be non-negative")

    @property
    def n_columns(self) -> int:
        return max(1, math.ceil(round(self.colsample_bytree * N_FEATURES, 9)))


def soft_threshold(g, alpha: float):
    """``sign(g) * max(|g| - alpha, 0)``; works on scalars and arrays."""
    return np.sign(g) * np.maximum(np.abs(g) - alpha, 0.0)


def leaf_weight(g_sum: float, h_sum: float, alpha: float, reg_lambda: float) -> float:
    return float(-soft_threshold(g_sum, alpha) / (h_sum + reg_lambda))


def sample_columns(config: TrainConfig, tree_index: int) -> tuple[int, ...]:
    k = config.n_columns
    if k >= N_FEATURES:
        return tuple(range(N_FEATURES))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((config.rng_seed, tree_index))))
    return tuple(sorted(int(c) for c in rng.choice(N_FEATURES, size=k, replace=False)))


class RegressionTree:
    """Array-backed binary tree; node 0 is the root, ``feature == -1`` marks a leaf.

    Rows with ``x[feature] < threshold`` go left.
    """

    def __init__(self, columns=tuple(range(N_FEATURES))):
        self.columns = tuple(columns)
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.gain: list[float] = []

    def _add(self, feature=-1, threshold=0.0, value=0.0, gain=0.0) -> int:
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        self.gain.append(gain)
        return len(self.feature) - 1

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self, node: int = 0) -> int:
        if self.feature[node] < 0:
            return 0
        return 1 + max(self.depth(self.left[node]), self.depth(self.right[node]))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf node index reached by each row of ``X``."""
        feat = np.asarray(self.feature)
        thr = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            f = feat[node]
            active = f >= 0
            if not active.any():
                return node
            rows = np.nonzero(active)[0]
            go_left = X[rows, f[active]] < thr[node[active]]
            node[rows] = np.where(go_left, left[node[active]], right[node[active]])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.value)[self.apply(X)]

    def predict_one(self, row) -> float:
        node = 0
        while self.feature[node] >= 0:
            node = self.left[node] if row[self.feature[node]] < self.threshold[node] else self.right[node]
        return self.value[node]

    def to_dict(self, node: int = 0) -> dict:
        if self.feature[node] < 0:
            return {"leaf": self.value[node]}
        return {
            "feature": self.feature[node],
            "threshold": self.threshold[node],
            "gain": self.gain[node],
            "left": self.to_dict(self.left[node]),
            "right": self.to_dict(self.right[node]),
        }

    @classmethod
    def from_dict(cls, doc: dict, columns) -> "RegressionTree":
        tree = cls(columns)

        def build(d) -> int:
            if "leaf" in d:
                return tree._add(value=float(d["leaf"]))
            idx = tree._add(int(d["feature"]), float(d["threshold"]), gain=float(d["gain"]))
            tree.left[idx] = build(d["left"])
            tree.right[idx] = build(d["right"])
            return idx

        build(doc)
        return tree


@dataclass
class BoostedForest:
    base_score: float
    trees: list[RegressionTree]
    config: TrainConfig
    feature_schema: tuple[str, ...] = FEATURES

    def predict_matrix(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        pred = np.full(len(X), self.base_score)
        lr = self.config.learning_rate
        for tree in self.trees:
            pred += lr * tree.predict(X)
        return pred

    def staged_predict(self, X):
        """Yield predictions after 0, 1, ..., n trees (same arithmetic as :func:`fit`)."""
        X = np.asarray(X, dtype=np.float64)
        pred = np.full(len(X), self.base_score)
        yield pred.copy()
        for tree in self.trees:
            pred += self.config.learning_rate * tree.predict(X)
            yield pred.copy()


def predict(forest: BoostedForest, fv: FeatureVector) -> float:
    """Forecast travel time (seconds) for one feature vector."""
    if not isinstance(fv, FeatureVector):
        raise TypeError("predict expects a FeatureVector")
    row = fv.as_row()
    pred = forest.base_score
    lr = forest.config.learning_rate
    for tree in forest.trees:
        pred += lr * tree.predict_one(row)
    return pred


# --------------------------------------------------------------------------
# training


class _Grower:
    def __init__(self, X, config: TrainConfig):
        self.X = X
        self.config = config
        # global stable sort per feature; node subsets are filtered, never re-sorted
        self.sorted_rows = [np.argsort(X[:, f], kind="stable") for f in range(N_FEATURES)]

    def grow(self, grad: np.ndarray, columns) -> tuple[RegressionTree, np.ndarray]:
        tree = RegressionTree(columns)
        leaf_of = np.empty(len(grad), dtype=np.int64)
        member = np.zeros(len(grad), dtype=bool)
        self._node(tree, grad, np.arange(len(grad)), 0, member, leaf_of)
        return tree, leaf_of

    def _node(self, tree, grad, rows, depth, member, leaf_of) -> int:
        cfg = self.config
        g_sum = math.fsum(grad[rows])
        h_sum = float(len(rows))
        split = None
        if depth < cfg.max_depth and len(rows) >= 2:
            member[rows] = True
            split = self._best_split(tree.columns, grad, member, g_sum, h_sum)
            member[rows] = False
        if split is None:
            idx = tree._add(value=leaf_weight(g_sum, h_sum, cfg.alpha, cfg.reg_lambda))
            leaf_of[rows] = idx
            return idx
        f, thr, gain = split
        idx = tree._add(f, thr, gain=gain)
        go_left = self.X[rows, f] < thr
        tree.left[idx] = self._node(tree, grad, rows[go_left], depth + 1, member, leaf_of)
        tree.right[idx] = self._node(tree, grad, rows[~go_left], depth + 1, member, leaf_of)
        return idx

    def _best_split(self, columns, grad, member, g_sum, h_sum):
        cfg = self.config
        alpha, lam, mcw = cfg.alpha, cfg.reg_lambda, cfg.min_child_weight
        parent = float(soft_threshold(g_sum, alpha) ** 2 / (h_sum + lam))
        candidates = []  # (feature, thresholds, gains)
        scale = parent
        for f in columns:
            order = self.sorted_rows[f]
            order = order[member[order]]
            xs = self.X[order, f]
            gl = np.cumsum(grad[order])[:-1]
            hl = np.arange(1, len(order), dtype=np.float64)
            hr = h_sum - hl
            ok = (xs[:-1] != xs[1:]) & (hl >= mcw) & (hr >= mcw)
            if not ok.any():
                continue
            gl = gl[ok]
            gr = g_sum - gl
            terms = (soft_threshold(gl, alpha) ** 2 / (hl[ok] + lam)
                     + soft_threshold(gr, alpha) ** 2 / (hr[ok] + lam))
            gains = 0.5 * (terms - parent) - cfg.gamma
            thresholds = (xs[:-1][ok] + xs[1:][ok]) / 2.0
            scale = max(scale, float(terms.max()))
            candidates.append((f, thresholds, gains))
        if not candidates:
            return None
        best = max(float(c[2].max()) for c in candidates)
        # gains equal up to rounding count as ties
        tol = 1e-9 * max(scale, np.finfo(float).tiny)
        if best <= tol:
            return None
        for f, thresholds, gains in sorted(candidates, key=lambda c: c[0]):
            tied = gains >= best - tol
            if tied.any():
                k = int(np.argmin(np.where(tied, thresholds, np.inf)))
                return f, float(thresholds[k]), float(gains[k])
        return None


def canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row permutation sorting lexicographically by (features..., target)."""
    keys = [y] + [X[:, f] for f in reversed(range(X.shape[1]))]
    return np.lexsort(keys)


def fit_arrays(X, y, config: TrainConfig = TrainConfig(),
               callback: Callable[[int, float], None] | None = None) -> BoostedForest:
    """Fit on a feature matrix (columns in :data:`FEATURES` order) and targets.

    ``callback(round, train_mse)`` is invoked after the base score (round 0)
    and after every tree.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise ValueError("empty dataset")
    if X.shape != (len(y), N_FEATURES):
        raise ValueError(f"expected X of shape ({len(y)}, {N_FEATURES}), got {X.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite target")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature")
    order = canonical_order(X, y)
    X, y = X[order], y[order]

    base = math.fsum(y) / len(y)
    pred = np.full(len(y), base)
    grower = _Grower(X, config)
    trees = []
    if callback:
        callback(0, float(np.mean((pred - y) ** 2)))
    for t in range(config.n_estimators):
        grad = pred - y
        tree, leaf_of = grower.grow(grad, sample_columns(config, t))
        pred += config.learning_rate * np.asarray(tree.value)[leaf_of]
        trees.append(tree)
        if callback:
            callback(t + 1, float(np.mean((pred - y) ** 2)))
    return BoostedForest(base, trees, config)


def fit(dataset: Sequence[tuple[FeatureVector, float]], config: TrainConfig = TrainConfig(),
        callback=None) -> BoostedForest:
    if not dataset:
        raise ValueError("empty dataset")
    X = np.array([fv.as_row() for fv, _ in dataset], dtype=np.float64)
    y = np.array([target for _, target in dataset], dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("targets must be positive travel times")
    return fit_arrays(X, y, config, callback)


# --------------------------------------------------------------------------
# artifact


def save_model(forest: BoostedForest) -> bytes:
    config = asdict(forest.config)
    doc = {
        "format": ARTIFACT_FORMAT,
        "format_version": ARTIFACT_VERSION,
        "feature_schema": list(forest.feature_schema),
        "config": config,
        "base_score": forest.base_score,
        "trees": [{"columns": list(t.columns), "root": t.to_dict()} for t in forest.trees],
    }
    return (json.dumps(doc, indent=1) + "\n").encode("utf-8")


def load_model(data: bytes) -> BoostedForest:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError("corrupted artifact") from exc
    if not isinstance(doc, dict) or doc.get("format") != ARTIFACT_FORMAT:
        raise ModelFormatError("corrupted artifact")
    version = doc.get("format_version")
    if not isinstance(version, int):
        raise ModelFormatError("corrupted artifact")
    if version != ARTIFACT_VERSION:
        raise ModelFormatError(f"version mismatch: artifact v{version}, supported v{ARTIFACT_VERSION}")
    try:
        cfg = dict(doc["config"])
        cfg.pop("objective", None)
        config = TrainConfig(**cfg)
        trees = [RegressionTree.from_dict(t["root"], t["columns"]) for t in doc["trees"]]
        schema = tuple(doc["feature_schema"])
        base = float(doc["base_score"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError("corrupted artifact") from exc
    if schema != FEATURES:
        raise ModelFormatError(f"corrupted artifact: unexpected feature schema {schema}")
    return BoostedForest(base, trees, config, schema)
