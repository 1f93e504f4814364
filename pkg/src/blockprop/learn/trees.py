"""Tree ensembles: Newton-boosted classifier and bagged regression forest."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import expit

from ..io import atomic_write_text
from . import kernels

logger = logging.getLogger(__name__)

MODES = ("boosted_classifier", "boosted_regressor", "bagged_regressor")
_FORMAT = "blockprop-tree-ensemble"


class TrainingError(ValueError):
    pass


class ColumnMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class BoostParams:
    n_estimators: int = 500
    learning_rate: float = 0.1
    max_depth: int = 6
    subsample: float = 1.0
    min_child_weight: float = 1.0
    reg_lambda: float = 1.0


@dataclass(frozen=True)
class ForestParams:
    n_estimators: int = 100
    max_depth: int = 16
    max_features: str | float | int | None = "sqrt"
    min_child_weight: float = 1.0


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    def __len__(self) -> int:
        return len(self.feature)

    @cached_property
    def depth(self) -> int:
        depth = np.zeros(len(self), dtype=np.int64)
        for k in range(len(self)):
            if self.feature[k] >= 0:
                depth[self.left[k]] = depth[self.right[k]] = depth[k] + 1
        return int(depth.max()) if len(self) else 0

    def expected_value(self) -> float:
        """Cover-weighted mean leaf value."""
        leaf = self.feature < 0
        return float(np.sum(self.cover[leaf] * self.value[leaf]) / self.cover[0])

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float),
            np.asarray(d["cover"], dtype=float),
        )


@dataclass(frozen=True, eq=False)
class PackedForest:
    """Trees padded into ``(n_trees, max_nodes)`` arrays for the kernels."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    max_depth: int

    @classmethod
    def pack(cls, trees) -> "PackedForest":
        width = max((len(t) for t in trees), default=1)
        shape = (len(trees), width)
        feature = np.full(shape, -1, dtype=np.int64)
        left = np.full(shape, -1, dtype=np.int64)
        right = np.full(shape, -1, dtype=np.int64)
        threshold, value, cover = np.zeros(shape), np.zeros(shape), np.ones(shape)
        for i, t in enumerate(trees):
            m = len(t)
            feature[i, :m], threshold[i, :m] = t.feature, t.threshold
            left[i, :m], right[i, :m] = t.left, t.right
            value[i, :m], cover[i, :m] = t.value, t.cover
        depth = max((t.depth for t in trees), default=0)
        return cls(feature, threshold, left, right, value, cover, depth)


@dataclass(frozen=True, eq=False)
class TreeEnsemble:
    mode: str
    trees: tuple[Tree, ...]
    base_score: float
    n_features: int
    params: dict = field(default_factory=dict)
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown ensemble mode {self.mode!r}")
        for t in self.trees:
            if np.any(t.feature >= self.n_features):
                raise ValueError("tree splits on a feature outside the manifest")

    @property
    def n_estimators(self) -> int:
        return len(self.trees)

    @cached_property
    def packed(self) -> PackedForest:
        return PackedForest.pack(self.trees)

    @property
    def tree_scale(self) -> float:
        """Multiplier applied to the summed tree outputs."""
        if self.mode == "bagged_regressor" and self.trees:
            return 1.0 / len(self.trees)
        return 1.0

    def _check(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ColumnMismatchError(f"expected {self.n_features} feature columns, got {X.shape}")
        return X

    def margin(self, X) -> np.ndarray:
        """Raw model output: log-odds for the classifier, value for the regressor."""
        X = self._check(X)
        if not self.trees:
            return np.full(X.shape[0], self.base_score)
        pk = self.packed
        total = kernels.predict_forest(X, pk.feature, pk.threshold, pk.left, pk.right, pk.value)
        return self.base_score + total * self.tree_scale

    def predict(self, X) -> np.ndarray:
        m = self.margin(X)
        if self.mode == "boosted_classifier":
            return expit(m)
        return m

    # serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": _FORMAT,
            "version": 1,
            "mode": self.mode,
            "base_score": self.base_score,
            "n_features": self.n_features,
            "params": self.params,
            "feature_names": list(self.feature_names),
            "trees": [t.to_dict() for t in self.trees],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TreeEnsemble":
        d = json.loads(text)
        if d.get("format") != _FORMAT:
            raise ValueError("not a serialized tree ensemble")
        return cls(
            d["mode"],
            tuple(Tree.from_dict(t) for t in d["trees"]),
            float(d["base_score"]),
            int(d["n_features"]),
            d.get("params", {}),
            tuple(d.get("feature_names", ())),
        )

    def save(self, path: str | os.PathLike) -> None:
        atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "TreeEnsemble":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def presort(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature stable argsort and the sorted values, both ``(n_features, n_samples)``."""
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    return order, np.ascontiguousarray(np.take_along_axis(X.T, order, axis=1))


_NO_MASK = np.zeros((1, 1), dtype=np.bool_)


def _tree_from(arrays) -> Tree:
    return Tree(*arrays)


def _xy(data, y=None):
    if y is not None:
        return np.ascontiguousarray(data, dtype=float), np.asarray(y, dtype=float), ()
    X, y = data.X, data.y
    return np.ascontiguousarray(X, dtype=float), np.asarray(y, dtype=float), tuple(getattr(data, "feature_names", ()))


def logistic_loss(y: np.ndarray, margin: np.ndarray) -> float:
    # log(1 + exp(m)) - y m, computed stably
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


def fit_boosted(X, y, params: BoostParams = BoostParams(), seed: int = 0, feature_names=(), callback=None) -> TreeEnsemble:
    """Gradient-boosted trees on logistic loss with Newton leaf weights.

    ``callback(t, margin)`` is called after each tree (used to monitor the
    training loss).
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise TrainingError("X and y have different lengths")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos + n_neg != len(y):
        raise TrainingError("classification labels must be 0/1")
    if n_pos < 2 or n_neg < 2:
        raise TrainingError("need at least 2 samples of each class")
    rng = np.random.default_rng(seed)
    order, xsorted = presort(X)
    work = kernels.workspace(*X.shape)
    n = len(y)
    p = min(max(n_pos / n, 1e-6), 1 - 1e-6)
    base = math.log(p / (1 - p))
    margin = np.full(n, base)
    trees = []
    ones = np.ones(n)
    for t in range(params.n_estimators):
        prob = expit(margin)
        if params.subsample < 1.0:
            w = np.zeros(n)
            w[rng.choice(n, size=max(1, int(round(params.subsample * n))), replace=False)] = 1.0
        else:
            w = ones
        g = (prob - y) * w
        h = prob * (1.0 - prob) * w
        arrays = kernels.grow_tree(
            X, order, xsorted, g, h, w, params.max_depth, params.reg_lambda,
            params.min_child_weight, params.learning_rate, _NO_MASK, False, *work,
        )
        tree = _tree_from(arrays)
        trees.append(tree)
        margin = margin + kernels.predict_forest(
            X, tree.feature[None], tree.threshold[None], tree.left[None], tree.right[None], tree.value[None]
        )
        if callback is not None:
            callback(t, margin)
    return TreeEnsemble("boosted_classifier", tuple(trees), base, X.shape[1], asdict(params), tuple(feature_names))


def fit_boosted_regressor(X, y, params: BoostParams = BoostParams(), seed: int = 0, feature_names=()) -> TreeEnsemble:
    """Gradient-boosted trees on squared error (the optional second regressor)."""
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise TrainingError("X and y must be non-empty and of equal length")
    rng = np.random.default_rng(seed)
    order, xsorted = presort(X)
    work = kernels.workspace(*X.shape)
    n = len(y)
    base = float(np.mean(y))
    margin = np.full(n, base)
    trees = []
    ones = np.ones(n)
    for _ in range(params.n_estimators):
        if params.subsample < 1.0:
            w = np.zeros(n)
            w[rng.choice(n, size=max(1, int(round(params.subsample * n))), replace=False)] = 1.0
        else:
            w = ones
        arrays = kernels.grow_tree(
            X, order, xsorted, (margin - y) * w, w.copy(), w, params.max_depth, params.reg_lambda,
            params.min_child_weight, params.learning_rate, _NO_MASK, False, *work,
        )
        tree = _tree_from(arrays)
        trees.append(tree)
        margin = margin + kernels.predict_forest(
            X, tree.feature[None], tree.threshold[None], tree.left[None], tree.right[None], tree.value[None]
        )
    return TreeEnsemble("boosted_regressor", tuple(trees), base, X.shape[1], asdict(params), tuple(feature_names))


def train_classifier(data, params: BoostParams | None = None, seed: int = 0) -> TreeEnsemble:
    """Train the boosted classifier on a labeled dataset (``.X``, ``.y``)."""
    X, y, names = _xy(data)
    return fit_boosted(X, y, params or BoostParams(), seed, names)


def _n_features_per_split(spec, p: int) -> int:
    if spec is None:
        return p
    if spec == "sqrt":
        return max(1, int(math.isqrt(p)))
    if spec == "log2":
        return max(1, int(math.log2(p)))
    if isinstance(spec, float) and 0.0 < spec <= 1.0:
        return max(1, int(spec * p))
    if isinstance(spec, int) and spec >= 1:
        return min(spec, p)
    raise ValueError(f"bad max_features {spec!r}")


def fit_forest(X, y, params: ForestParams = ForestParams(), seed: int = 0, feature_names=()) -> TreeEnsemble:
    """Bagged regression trees: bootstrap rows, random feature subset per split."""
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n == 0:
        raise TrainingError("cannot fit a forest on empty data")
    rng = np.random.default_rng(seed)
    order, xsorted = presort(X)
    work = kernels.workspace(*X.shape)
    k = _n_features_per_split(params.max_features, p)
    trees = []
    for _ in range(params.n_estimators):
        w = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)
        cap = kernels.node_capacity(int(np.count_nonzero(w)))
        if k < p:
            keys = rng.random((cap, p))
            pick = np.argpartition(keys, k - 1, axis=1)[:, :k]
            mask = np.zeros((cap, p), dtype=np.bool_)
            np.put_along_axis(mask, pick, True, axis=1)
            use = True
        else:
            mask, use = _NO_MASK, False
        arrays = kernels.grow_tree(
            X, order, xsorted, -y * w, w.copy(), w, params.max_depth, 0.0, params.min_child_weight, 1.0, mask, use, *work
        )
        trees.append(_tree_from(arrays))
    return TreeEnsemble("bagged_regressor", tuple(trees), 0.0, p, asdict(params), tuple(feature_names))


def train_regressor(data, params: ForestParams | None = None, seed: int = 0) -> TreeEnsemble:
    X, y, names = _xy(data)
    return fit_forest(X, y, params or ForestParams(), seed, names)


def predict(model: TreeEnsemble, X) -> np.ndarray:
    """Probability for the classifier, value for the regressor."""
    return model.predict(X)
