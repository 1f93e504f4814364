"""Shapley attributions for tree ensembles and feature ablation experiments."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .io import write_csv
from .labeling import LabeledDataset
from .learn import kernels
from .learn.trees import BoostParams, ColumnMismatchError, TreeEnsemble
from .learn.validation import CVResult, cross_validate, holdout_auc

logger = logging.getLogger(__name__)

ABLATION_MODES = ("only_group", "all_but_group")


@dataclass(frozen=True, eq=False)
class AttributionMatrix:
    """Per-sample, per-feature Shapley values of the model margin."""

    users: tuple[str, ...]
    feature_names: tuple[str, ...]
    phi: np.ndarray
    base_value: float
    meta: dict = field(default_factory=dict)

    def reconstruct(self) -> np.ndarray:
        return self.phi.sum(axis=1) + self.base_value

    def local_accuracy_error(self, margin) -> float:
        if len(self.users) == 0:
            return 0.0
        return float(np.max(np.abs(self.reconstruct() - np.asarray(margin, dtype=float))))

    def to_csv(self, path: str | os.PathLike) -> None:
        rows = (
            (u, name, float(self.phi[i, j]))
            for i, u in enumerate(self.users)
            for j, name in enumerate(self.feature_names)
        )
        write_csv(path, ("user_id", "feature", "phi"), rows)


def tree_shap(model: TreeEnsemble, X, users: Sequence[str] | None = None, background=None) -> AttributionMatrix:
    """Exact path-dependent TreeSHAP.

    The reference distribution is the one implied by the training cover
    counts stored in every node, so ``background`` (the training rows) is
    only used to record its size in the metadata.

    Raises
    ------
    ColumnMismatchError
        If ``X`` does not have the model's feature count.
    """
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ColumnMismatchError(f"model expects {model.n_features} features, got {X.shape}")
    users = tuple(users) if users is not None else tuple(str(i) for i in range(X.shape[0]))
    scale = model.tree_scale
    base = model.base_score + scale * sum(t.expected_value() for t in model.trees)
    names = model.feature_names or tuple(f"f{j}" for j in range(model.n_features))
    if not model.trees or X.shape[0] == 0:
        phi = np.zeros(X.shape)
    else:
        pk = model.packed
        phi = kernels.tree_shap(X, pk.feature, pk.threshold, pk.left, pk.right, pk.value, pk.cover, pk.max_depth, scale)
    meta = {"method": "path_dependent", "background": "training_covers"}
    if background is not None:
        meta["background_rows"] = int(np.asarray(background).shape[0])
    return AttributionMatrix(users, tuple(names), phi, float(base), meta)


def brute_force_shapley(model: TreeEnsemble, x) -> tuple[np.ndarray, float]:
    """Shapley values by enumerating every coalition (exponential; for checks).

    The value of a coalition is the cover-weighted expectation of the margin
    when features outside it are marginalized along the tree paths.
    """
    from itertools import combinations
    from math import factorial

    x = np.asarray(x, dtype=float)
    p = model.n_features

    def expect(tree, node, known):
        f = tree.feature[node]
        if f < 0:
            return tree.value[node]
        lc, rc = tree.left[node], tree.right[node]
        if f in known:
            return expect(tree, lc if x[f] <= tree.threshold[node] else rc, known)
        c = tree.cover[node]
        return (tree.cover[lc] * expect(tree, lc, known) + tree.cover[rc] * expect(tree, rc, known)) / c

    def v(known):
        return model.base_score + model.tree_scale * sum(expect(t, 0, known) for t in model.trees)

    phi = np.zeros(p)
    for j in range(p):
        others = [k for k in range(p) if k != j]
        for size in range(p):
            w = factorial(size) * factorial(p - size - 1) / factorial(p)
            for s in combinations(others, size):
                s = set(s)
                phi[j] += w * (v(s | {j}) - v(s))
    return phi, float(v(set()))


# ---------------------------------------------------------------------------
# aggregation


@dataclass(frozen=True, eq=False)
class ImportanceReport:
    feature_names: tuple[str, ...]
    feature_groups: tuple[str, ...]
    importance: np.ndarray
    ranks: np.ndarray
    group_names: tuple[str, ...]
    group_shares: np.ndarray
    degenerate: bool = False

    def ranking(self) -> tuple[str, ...]:
        """Feature names from most to least important."""
        order = np.argsort(self.ranks, kind="stable")
        return tuple(self.feature_names[j] for j in order)

    def top(self, n: int) -> tuple[str, ...]:
        return self.ranking()[: max(n, 0)]

    def rank_rows(self) -> list[tuple]:
        return [
            (int(self.ranks[j]), self.feature_names[j], self.feature_groups[j], float(self.importance[j]))
            for j in np.argsort(self.ranks, kind="stable")
        ]

    def group_rows(self) -> list[tuple]:
        return [(g, float(s)) for g, s in zip(self.group_names, self.group_shares)]


def aggregate_importance(
    attr: AttributionMatrix, feature_groups: Sequence[str], group_order: Sequence[str] | None = None
) -> ImportanceReport:
    """Mean |phi| per feature, normalized group shares and a rank table.

    Ties in importance keep the column (manifest) order. When every
    attribution is zero the group shares are uniform and ``degenerate`` is set.
    """
    groups = tuple(feature_groups)
    if len(groups) != len(attr.feature_names):
        raise ValueError("one group per feature is required")
    if attr.phi.shape[0]:
        imp = np.mean(np.abs(attr.phi), axis=0)
    else:
        imp = np.zeros(len(groups))
    order = np.lexsort((np.arange(len(imp)), -imp))
    ranks = np.empty(len(imp), dtype=np.int64)
    ranks[order] = np.arange(1, len(imp) + 1)
    names = tuple(group_order) if group_order is not None else tuple(dict.fromkeys(groups))
    sums = np.array([imp[[j for j, g in enumerate(groups) if g == name]].sum() for name in names])
    total = sums.sum()
    degenerate = not total > 0.0
    shares = np.full(len(names), 1.0 / max(len(names), 1)) if degenerate else sums / total
    return ImportanceReport(attr.feature_names, groups, imp, ranks, names, shares, degenerate)


def beeswarm_export(attr: AttributionMatrix, X, top_n: int = 10) -> list[tuple]:
    """Plot-ready rows ``(feature, user, phi, value, value_percentile)``.

    Rows cover the ``top_n`` features by mean |phi|; the percentile of a
    value within its column uses average ranks, 100 * (rank - 0.5) / n.
    """
    X = np.asarray(X, dtype=float)
    if top_n <= 0 or X.shape[0] == 0:
        return []
    imp = np.mean(np.abs(attr.phi), axis=0)
    order = np.lexsort((np.arange(len(imp)), -imp))[:top_n]
    n = X.shape[0]
    rows = []
    for j in order:
        pct = 100.0 * (rankdata(X[:, j], method="average") - 0.5) / n
        name = attr.feature_names[j]
        for i in range(n):
            rows.append((name, attr.users[i], float(attr.phi[i, j]), float(X[i, j]), float(pct[i])))
    return rows


def bump_table(reports: Mapping[float, ImportanceReport], top: int = 8) -> list[tuple]:
    """Ranks per quantile for the union of each quantile's top features."""
    keys = sorted(reports)
    union: list[str] = []
    for q in keys:
        for name in reports[q].top(top):
            if name not in union:
                union.append(name)
    rows = []
    for q in keys:
        rep = reports[q]
        for name in union:
            j = rep.feature_names.index(name)
            rows.append((q, name, int(rep.ranks[j]), float(rep.importance[j])))
    return rows


# ---------------------------------------------------------------------------
# ablation


def _group_subsets(data: LabeledDataset, mode: str, groups: Sequence[str] | None) -> list[tuple[str, tuple[str, ...]]]:
    if mode not in ABLATION_MODES:
        raise ValueError(f"unknown ablation mode {mode!r}")
    groups = tuple(groups) if groups is not None else tuple(dict.fromkeys(data.feature_groups))
    subsets = []
    for g in groups:
        member = data.group_columns(g)
        if mode == "only_group":
            cols = member
        else:
            cols = tuple(n for n in data.feature_names if n not in member)
        if cols:
            subsets.append((g, cols))
    return subsets


def ablate_groups(
    datasets: Mapping,
    mode: str,
    groups: Sequence[str] | None = None,
    params: BoostParams = BoostParams(),
    runs: int = 10,
    folds: int = 10,
    seed: int = 0,
    jobs: int = 1,
    baseline: Mapping | None = None,
) -> list[dict]:
    """Cross-validated AUC per (dataset key, group) with restricted columns.

    ``datasets`` maps a key (such as a quantile) to a classification
    dataset. Each key also gets an all-features baseline row, reused from
    ``baseline`` when precomputed.
    """
    rows = []
    for key, data in datasets.items():
        if baseline is not None and key in baseline:
            base = baseline[key]
        else:
            base = cross_validate(data, params, runs, folds, seed, jobs=jobs)
        rows.append({"key": key, "mode": mode, "subset": "all", "mean_auc": base.mean_auc, "std_auc": base.std_auc})
        for g, cols in _group_subsets(data, mode, groups):
            res = cross_validate(data.select(cols), params, runs, folds, seed, jobs=jobs)
            label = g if mode == "only_group" else f"all_but_{g}"
            rows.append({"key": key, "mode": mode, "subset": label, "mean_auc": res.mean_auc, "std_auc": res.std_auc})
            logger.info("%s %s %s: %.4f", key, mode, g, res.mean_auc)
    return rows


@dataclass(frozen=True)
class BestWorstPoint:
    n: int
    top: CVResult
    bottom: CVResult


def ablate_best_worst(
    data: LabeledDataset,
    ranking: Sequence[str],
    n_grid: Sequence[int],
    params: BoostParams = BoostParams(),
    runs: int = 10,
    seed: int = 0,
    jobs: int = 1,
) -> list[BestWorstPoint]:
    """Holdout AUC using the best-n and worst-n ranked features.

    Each point averages ``runs`` classifiers trained on independent random
    (undersampled) samples.
    """
    ranking = tuple(ranking)
    if set(ranking) != set(data.feature_names) or len(ranking) != len(data.feature_names):
        raise ValueError("ranking must cover every feature exactly once")
    out = []
    cache: dict[frozenset, CVResult] = {}

    def score(cols):
        key = frozenset(cols)
        if key not in cache:
            cache[key] = holdout_auc(data.select(cols), params, runs, seed=seed, jobs=jobs)
        return cache[key]

    for n in n_grid:
        n = min(max(int(n), 1), len(ranking))
        out.append(BestWorstPoint(n, score(ranking[:n]), score(ranking[-n:])))
    return out
