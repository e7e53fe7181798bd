"""
Second-order gradient-boosted regression trees (squared error).

For squared error the per-row gradient is ``g = pred - y`` and the hessian
is ``h = 1``. With G and H the sums over a node::

    soft_threshold(G, a) = sign(G) * max(0, |G| - a)
    leaf weight          = -soft_threshold(G, alpha) / (H + lambda)
    score(G, H)          = soft_threshold(G, alpha)**2 / (H + lambda)
    split gain           = (score(L) + score(R) - score(parent)) / 2

Splits are exact greedy over midpoints between consecutive distinct values.
Rows with ``x < threshold`` go left. Each tree sees a seeded sample of
``max(1, ceil(colsample_bytree * n_features))`` columns. Every tree is
built; ``best_iteration`` is the tree count with the lowest validation RMSE
and prediction is truncated there.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields as dc_fields, replace
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .utils import atomic_write_json

logger = logging.getLogger('floodsurrogate.gbdt')

FORMAT_NAME = 'floodsurrogate-gbdt'
FORMAT_VERSION = 1

LEAF = -1


class TrainingError(ValueError):
    """Training data is empty, inconsistent or non-finite."""


class ModelFormatError(ValueError):
    """A model file is unreadable or structurally invalid."""


class ModelVersionError(ModelFormatError):
    """A model file was written by a newer format version."""


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 0.01
    n_trees: int = 1000
    max_depth: int = 5
    l1_alpha: float = 1.0
    l2_lambda: float = 1.0
    colsample_bytree: float = 0.3
    min_split_gain: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.n_trees < 1:
            raise ValueError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.max_depth < 0:
            raise ValueError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.l1_alpha < 0 or self.l2_lambda < 0:
            raise ValueError("l1_alpha and l2_lambda must be >= 0")
        if not 0.0 < self.colsample_bytree <= 1.0:
            raise ValueError(f"colsample_bytree must be in (0, 1], got {self.colsample_bytree}")
        if self.min_split_gain < 0:
            raise ValueError(f"min_split_gain must be >= 0, got {self.min_split_gain}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def with_seed(self, seed: int) -> 'Hyperparams':
        return replace(self, seed=int(seed))

    def columns_per_tree(self, n_features: int) -> int:
        # The epsilon keeps products like 0.3 * 10 from rounding up to 4.
        return max(1, min(n_features, math.ceil(self.colsample_bytree * n_features - 1e-9)))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> 'Hyperparams':
        known = {f.name for f in dc_fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ValueError(f"unknown hyperparameters: {unknown}")
        return cls(**payload)


# ---------------------------------------------------------------------------
# Objective algebra
# ---------------------------------------------------------------------------


def soft_threshold(G, alpha: float):
    return np.sign(G) * np.maximum(0.0, np.abs(G) - alpha)


def leaf_weight(G: float, H: float, alpha: float, lam: float) -> float:
    # + 0.0 turns -0.0 into 0.0
    return float(-soft_threshold(G, alpha) / (H + lam)) + 0.0


def _score(G, H, alpha: float, lam: float):
    st = soft_threshold(G, alpha)
    return st * st / (H + lam)


def split_gain(GL: float, HL: float, GR: float, HR: float, alpha: float, lam: float) -> float:
    return float(
        0.5 * (_score(GL, HL, alpha, lam) + _score(GR, HR, alpha, lam) - _score(GL + GR, HL + HR, alpha, lam))
    )


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    gain: float


def best_split(
    X: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    alpha: float,
    lam: float,
    features: Optional[Sequence[int]] = None,
) -> Optional[Split]:
    """Highest-gain split of the rows in *X* over the candidate *features*.

    Ties go to the earlier feature, then to the smaller threshold. Returns
    None when no column has two distinct values.
    """
    n_rows = X.shape[0]
    if features is None:
        features = range(X.shape[1])
    features = list(features)
    if n_rows < 2 or not features:
        return None

    cols = X[:, features]
    order = np.argsort(cols, axis=0, kind='stable')
    sorted_x = np.take_along_axis(cols, order, axis=0)
    GL = np.cumsum(g[order], axis=0)[:-1]
    HL = np.cumsum(h[order], axis=0)[:-1]
    G = g.sum()
    H = h.sum()
    gains = 0.5 * (_score(GL, HL, alpha, lam) + _score(G - GL, H - HL, alpha, lam) - _score(G, H, alpha, lam))
    valid = sorted_x[1:] > sorted_x[:-1]
    if not valid.any():
        return None
    gains = np.where(valid, gains, -np.inf)

    # Feature-major flattening so argmax's first hit honours the tie order.
    flat = gains.T.ravel()
    best = int(np.argmax(flat))
    col, pos = divmod(best, n_rows - 1)
    lo = float(sorted_x[pos, col])
    hi = float(sorted_x[pos + 1, col])
    threshold = lo + (hi - lo) / 2.0
    if not lo < threshold <= hi:
        threshold = hi
    return Split(feature=features[col], threshold=threshold, gain=float(flat[best]))


# ---------------------------------------------------------------------------
# Trees
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Preorder node arrays; ``feature == -1`` marks a leaf.

    ``value`` holds raw leaf weights (before the learning rate); ``gain`` is
    the split gain of internal nodes and 0 at leaves.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    feature_subset: Tuple[int, ...]

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.feature == LEAF))

    @property
    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.feature[node] != LEAF:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max()) if self.n_nodes else 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Raw leaf weight reached by every row."""
        X = np.atleast_2d(X)
        nodes = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[nodes] != LEAF
        while active.any():
            idx = np.flatnonzero(active)
            cur = nodes[idx]
            go_left = X[idx, self.feature[cur]] < self.threshold[cur]
            nodes[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[nodes] != LEAF
        return self.value[nodes]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'feature_subset': list(self.feature_subset),
            'feature': self.feature.tolist(),
            'threshold': self.threshold.tolist(),
            'left': self.left.tolist(),
            'right': self.right.tolist(),
            'value': self.value.tolist(),
            'gain': self.gain.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> 'RegressionTree':
        return cls(
            feature=np.asarray(payload['feature'], dtype=np.int64),
            threshold=np.asarray(payload['threshold'], dtype=np.float64),
            left=np.asarray(payload['left'], dtype=np.int64),
            right=np.asarray(payload['right'], dtype=np.int64),
            value=np.asarray(payload['value'], dtype=np.float64),
            gain=np.asarray(payload['gain'], dtype=np.float64),
            feature_subset=tuple(int(f) for f in payload['feature_subset']),
        )


class _TreeBuilder:
    """Grows one tree depth-first and records the leaf weight of every training row."""

    def __init__(self, X, g, h, hp: Hyperparams, features: Sequence[int]):
        self.X = X
        self.g = g
        self.h = h
        self.hp = hp
        self.features = list(features)
        self.nodes: List[List[float]] = []  # [feature, threshold, left, right, value, gain]
        self.row_values = np.zeros(X.shape[0])

    def build(self) -> RegressionTree:
        self._grow(np.arange(self.X.shape[0]), 0)
        arr = list(zip(*self.nodes))
        return RegressionTree(
            feature=np.asarray(arr[0], dtype=np.int64),
            threshold=np.asarray(arr[1], dtype=np.float64),
            left=np.asarray(arr[2], dtype=np.int64),
            right=np.asarray(arr[3], dtype=np.int64),
            value=np.asarray(arr[4], dtype=np.float64),
            gain=np.asarray(arr[5], dtype=np.float64),
            feature_subset=tuple(self.features),
        )

    def _grow(self, rows: np.ndarray, depth: int) -> int:
        node = len(self.nodes)
        self.nodes.append([LEAF, 0.0, LEAF, LEAF, 0.0, 0.0])
        g = self.g[rows]
        h = self.h[rows]
        split = None
        if depth < self.hp.max_depth:
            split = best_split(self.X[rows], g, h, self.hp.l1_alpha, self.hp.l2_lambda, self.features)
        if split is None or not split.gain > self.hp.min_split_gain:
            weight = leaf_weight(g.sum(), h.sum(), self.hp.l1_alpha, self.hp.l2_lambda)
            self.nodes[node][4] = weight
            self.row_values[rows] = weight
            return node
        go_left = self.X[rows, split.feature] < split.threshold
        left = self._grow(rows[go_left], depth + 1)
        right = self._grow(rows[~go_left], depth + 1)
        self.nodes[node] = [split.feature, split.threshold, left, right, 0.0, split.gain]
        return node


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class GbdtModel:
    hyperparams: Hyperparams
    feature_names: Tuple[str, ...]
    base_score: float
    trees: List[RegressionTree]
    best_iteration: int
    train_rmse: List[float] = field(default_factory=list)
    valid_rmse: List[float] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.best_iteration <= len(self.trees):
            raise ValueError(f"best_iteration {self.best_iteration} outside 0..{len(self.trees)}")

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def active_trees(self) -> List[RegressionTree]:
        return self.trees[: self.best_iteration]

    @cached_property
    def _packed(self) -> Tuple[np.ndarray, ...]:
        """Active trees padded to one width; leaves loop onto themselves."""
        trees = self.active_trees
        width = max((t.n_nodes for t in trees), default=1)
        n = len(trees)
        feature = np.zeros((n, width), dtype=np.int64)
        threshold = np.full((n, width), np.inf)
        left = np.tile(np.arange(width), (n, 1))
        right = left.copy()
        value = np.zeros((n, width))
        for t, tree in enumerate(trees):
            k = tree.n_nodes
            internal = tree.feature != LEAF
            feature[t, :k] = np.where(internal, tree.feature, 0)
            threshold[t, :k] = np.where(internal, tree.threshold, np.inf)
            left[t, :k] = np.where(internal, tree.left, np.arange(k))
            right[t, :k] = np.where(internal, tree.right, np.arange(k))
            value[t, :k] = tree.value
        steps = max((t.depth for t in trees), default=0)
        return feature, threshold, left, right, value, steps


def _check_matrix(X, y, name: str) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise TrainingError(f"{name} features must be a 2-D matrix, got shape {X.shape}")
    if y.shape != (X.shape[0],):
        raise TrainingError(f"{name} has {X.shape[0]} rows but {y.size} targets")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise TrainingError(f"{name} contains non-finite feature or target values")
    return X, y


def _rmse(pred: np.ndarray, y: np.ndarray) -> float:
    return float(np.sqrt(np.mean((pred - y) ** 2)))


def train(
    X_train,
    y_train,
    X_valid,
    y_valid,
    hp: Hyperparams,
    feature_names: Optional[Sequence[str]] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> GbdtModel:
    """Fit ``hp.n_trees`` trees and keep the validation-optimal prefix.

    With no validation rows every tree is kept.

    Raises:
        TrainingError: empty or non-finite input, or mismatched shapes.
    """
    X, y = _check_matrix(X_train, y_train, 'training set')
    if X.shape[0] == 0:
        raise TrainingError("training set is empty")
    n_features = X.shape[1]
    if n_features == 0:
        raise TrainingError("training set has no feature columns")
    Xv, yv = _check_matrix(
        np.empty((0, n_features)) if X_valid is None else X_valid,
        np.empty(0) if y_valid is None else y_valid,
        'validation set',
    )
    if Xv.shape[1] != n_features:
        raise TrainingError(f"validation set has {Xv.shape[1]} columns, training set {n_features}")
    if feature_names is None:
        feature_names = [f'f{i}' for i in range(n_features)]
    if len(feature_names) != n_features:
        raise TrainingError(f"{len(feature_names)} feature names for {n_features} columns")

    base = float(y[0]) if np.all(y == y[0]) else float(np.mean(y))
    rng = np.random.default_rng(hp.seed)
    k = hp.columns_per_tree(n_features)
    h = np.ones(X.shape[0])

    pred = np.full(X.shape[0], base)
    pred_valid = np.full(Xv.shape[0], base)
    train_hist = [_rmse(pred, y)]
    valid_hist = [_rmse(pred_valid, yv)] if Xv.shape[0] else []
    trees: List[RegressionTree] = []
    for _ in range(hp.n_trees):
        subset = np.sort(rng.choice(n_features, size=k, replace=False))
        builder = _TreeBuilder(X, pred - y, h, hp, subset.tolist())
        tree = builder.build()
        trees.append(tree)
        pred = pred + hp.learning_rate * builder.row_values
        train_hist.append(_rmse(pred, y))
        if Xv.shape[0]:
            pred_valid = pred_valid + hp.learning_rate * tree.predict(Xv)
            valid_hist.append(_rmse(pred_valid, yv))

    if valid_hist:
        best = int(np.argmin(valid_hist))
    else:
        logger.warning("No validation rows; keeping every tree")
        best = len(trees)
    logger.debug(
        f"Trained {len(trees)} trees, best_iteration={best}, "
        f"train_rmse={train_hist[best]:.4g}" + (f", valid_rmse={valid_hist[best]:.4g}" if valid_hist else "")
    )
    return GbdtModel(
        hyperparams=hp,
        feature_names=tuple(feature_names),
        base_score=base,
        trees=trees,
        best_iteration=best,
        train_rmse=train_hist,
        valid_rmse=valid_hist,
        metadata=dict(metadata or {}),
    )


def predict_batch(model: GbdtModel, X) -> np.ndarray:
    """Predictions for every row of *X* using ``trees[:best_iteration]``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(f"expected rows of {model.n_features} features, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains non-finite values")
    if model.best_iteration == 0 or X.shape[0] == 0:
        return np.full(X.shape[0], model.base_score)
    feature, threshold, left, right, value, steps = model._packed
    tree_idx = np.arange(feature.shape[0])
    rows = np.arange(X.shape[0])[:, None]
    nodes = np.zeros((X.shape[0], feature.shape[0]), dtype=np.int64)
    for _ in range(steps):
        go_left = X[rows, feature[tree_idx, nodes]] < threshold[tree_idx, nodes]
        nodes = np.where(go_left, left[tree_idx, nodes], right[tree_idx, nodes])
    return model.base_score + model.hyperparams.learning_rate * value[tree_idx, nodes].sum(axis=1)


def predict(model: GbdtModel, row) -> float:
    """Prediction for a single feature row."""
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or row.size != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {row.size}")
    return float(predict_batch(model, row.reshape(1, -1))[0])


# ---------------------------------------------------------------------------
# Importance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureImportance:
    feature_names: Tuple[str, ...]
    fractions: Tuple[float, ...]
    degenerate: bool

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.feature_names, self.fractions))

    def above(self, threshold: float) -> List[Tuple[str, float]]:
        """Features with fraction >= *threshold*, largest first (ties keep column order)."""
        picked = [(n, f) for n, f in zip(self.feature_names, self.fractions) if f >= threshold]
        return sorted(picked, key=lambda item: -item[1])


def feature_importance(model: GbdtModel) -> FeatureImportance:
    """Share of total split gain per feature over the active trees."""
    totals = np.zeros(model.n_features)
    for tree in model.active_trees:
        internal = tree.feature != LEAF
        np.add.at(totals, tree.feature[internal], tree.gain[internal])
    total = float(totals.sum())
    if total <= 0:
        uniform = 1.0 / model.n_features
        return FeatureImportance(model.feature_names, tuple([uniform] * model.n_features), True)
    return FeatureImportance(model.feature_names, tuple(float(v) for v in totals / total), False)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def model_to_dict(model: GbdtModel) -> Dict[str, Any]:
    return {
        'format': FORMAT_NAME,
        'format_version': FORMAT_VERSION,
        'hyperparams': model.hyperparams.to_dict(),
        'feature_names': list(model.feature_names),
        'n_features': model.n_features,
        'base_score': model.base_score,
        'best_iteration': model.best_iteration,
        'history': {'train_rmse': list(model.train_rmse), 'valid_rmse': list(model.valid_rmse)},
        'metadata': model.metadata,
        'trees': [t.to_dict() for t in model.trees],
    }


def _validate_tree(tree: RegressionTree, n_features: int) -> None:
    n = tree.n_nodes
    arrays = (tree.threshold, tree.left, tree.right, tree.value, tree.gain)
    if n == 0 or any(a.shape != (n,) for a in arrays):
        raise ModelFormatError("tree arrays are empty or of unequal length")
    internal = tree.feature != LEAF
    subset = set(tree.feature_subset)
    if any(f < 0 or f >= n_features for f in subset):
        raise ModelFormatError("tree feature subset out of range")
    if any(int(f) not in subset for f in tree.feature[internal]):
        raise ModelFormatError("tree splits on a feature outside its subset")
    children = np.concatenate([tree.left[internal], tree.right[internal]])
    if children.size and (children.min() <= 0 or children.max() >= n):
        raise ModelFormatError("tree child index out of range")
    if np.unique(children).size != children.size or children.size != n - 1:
        raise ModelFormatError("tree nodes do not form a binary tree")
    if not np.all(np.isfinite(tree.value)) or not np.all(np.isfinite(tree.threshold)):
        raise ModelFormatError("tree contains non-finite numbers")


def model_from_dict(payload: Dict[str, Any]) -> GbdtModel:
    if not isinstance(payload, dict) or payload.get('format') != FORMAT_NAME:
        raise ModelFormatError("not a floodsurrogate model file")
    version = payload.get('format_version')
    if not isinstance(version, int):
        raise ModelFormatError("missing format_version")
    if version > FORMAT_VERSION:
        raise ModelVersionError(
            f"model format version {version} is newer than supported version {FORMAT_VERSION}"
        )
    try:
        names = tuple(str(n) for n in payload['feature_names'])
        if payload['n_features'] != len(names):
            raise ModelFormatError("n_features does not match feature_names")
        trees = [RegressionTree.from_dict(t) for t in payload['trees']]
        for tree in trees:
            _validate_tree(tree, len(names))
        history = payload.get('history', {})
        return GbdtModel(
            hyperparams=Hyperparams.from_dict(payload['hyperparams']),
            feature_names=names,
            base_score=float(payload['base_score']),
            trees=trees,
            best_iteration=int(payload['best_iteration']),
            train_rmse=[float(v) for v in history.get('train_rmse', [])],
            valid_rmse=[float(v) for v in history.get('valid_rmse', [])],
            metadata=dict(payload.get('metadata', {})),
        )
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"invalid model file: {exc}")


def save_model(model: GbdtModel, path: str) -> None:
    """Write the model as versioned JSON (floats at full precision)."""
    atomic_write_json(path, model_to_dict(model))


def load_model(path: str) -> GbdtModel:
    """
    Raises:
        ModelFormatError: missing, truncated or structurally invalid file.
        ModelVersionError: file written by a newer format version.
    """
    try:
        with open(path) as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise ModelFormatError(f"model file not found: {path}")
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"corrupt model file {path}: {exc}")
    return model_from_dict(payload)
