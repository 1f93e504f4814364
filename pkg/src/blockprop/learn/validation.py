"""Evaluation protocols: repeated stratified CV, holdout runs, regression split."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.model_selection import StratifiedKFold

from ..labeling import LabeledDataset, balanced_rows
from .metrics import mae, r2_score, roc_auc
from .trees import BoostParams, ForestParams, TrainingError, fit_boosted, fit_forest

logger = logging.getLogger(__name__)

_SEED_SPACE = 2**31 - 1


@dataclass(frozen=True)
class CVResult:
    mean_auc: float
    std_auc: float
    run_aucs: tuple[float, ...]
    n_samples: int
    n_features: int
    protocol: dict = field(default_factory=dict)


def run_seeds(seed: int, runs: int) -> list[int]:
    return [int(s) for s in np.random.default_rng(seed).integers(0, _SEED_SPACE, size=runs)]


def _map(fn, items, jobs: int):
    # the tree kernels release the GIL, so threads overlap real work
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _oof_scores(X, y, params: BoostParams, folds: int, seed: int, jobs: int) -> np.ndarray:
    skf = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    splits = list(skf.split(X, y))
    fold_seeds = run_seeds(seed, folds)

    def one(k):
        train, test = splits[k]
        model = fit_boosted(X[train], y[train], params, fold_seeds[k])
        return test, model.margin(X[test])

    scores = np.empty(len(y))
    for test, s in _map(one, range(folds), jobs):
        scores[test] = s
    return scores


def cross_validate(
    data: LabeledDataset,
    params: BoostParams = BoostParams(),
    runs: int = 10,
    folds: int = 10,
    seed: int = 0,
    undersample: bool = True,
    jobs: int = 1,
) -> CVResult:
    """Repeated k-fold cross-validated ROC AUC of the boosted classifier.

    Each run draws a fresh balanced undersample, splits it into folds
    stratified by label and scores the pooled out-of-fold margins. The
    result reports mean and population std of the per-run AUCs.
    """
    if data.label is None:
        raise TrainingError("cross_validate needs a classification dataset")
    X = np.ascontiguousarray(data.X, dtype=float)
    y = data.label.astype(float)
    aucs = []
    for r, s in enumerate(run_seeds(seed, runs)):
        rows = balanced_rows(data.label, s) if undersample else np.arange(len(y))
        yr = y[rows]
        n_pos = int(yr.sum())
        if min(n_pos, len(yr) - n_pos) < folds:
            raise TrainingError(f"need at least {folds} samples per class, have {n_pos} / {len(yr) - n_pos}")
        scores = _oof_scores(X[rows], yr, params, folds, s, jobs)
        aucs.append(roc_auc(scores, yr))
        logger.debug("run %d auc %.4f", r, aucs[-1])
    a = np.array(aucs)
    protocol = {
        "runs": runs,
        "folds": folds,
        "seed": seed,
        "undersample": "per_run_before_folds" if undersample else "none",
        "stratified": True,
        "auc": "pooled_out_of_fold",
    }
    return CVResult(float(a.mean()), float(a.std()), tuple(aucs), int(len(rows)), X.shape[1], protocol)


def holdout_auc(
    data: LabeledDataset,
    params: BoostParams = BoostParams(),
    runs: int = 10,
    test_fraction: float = 0.2,
    seed: int = 0,
    jobs: int = 1,
) -> CVResult:
    """Mean AUC of ``runs`` classifiers, each trained on an independent random sample.

    Every run undersamples afresh and holds out a stratified random test
    fraction.
    """
    if data.label is None:
        raise TrainingError("holdout_auc needs a classification dataset")
    X = np.ascontiguousarray(data.X, dtype=float)
    y = data.label.astype(float)

    def one(s):
        rows = balanced_rows(data.label, s)
        rng = np.random.default_rng(s)
        test = []
        for cls in (0, 1):
            members = rows[y[rows] == cls]
            k = max(1, int(round(test_fraction * len(members))))
            test.append(rng.choice(members, size=k, replace=False))
        test = np.sort(np.concatenate(test))
        train = np.setdiff1d(rows, test)
        model = fit_boosted(X[train], y[train], params, s)
        return roc_auc(model.margin(X[test]), y[test])

    aucs = np.array(_map(one, run_seeds(seed, runs), jobs))
    protocol = {"runs": runs, "test_fraction": test_fraction, "seed": seed, "undersample": "per_run"}
    return CVResult(float(aucs.mean()), float(aucs.std()), tuple(aucs.tolist()), len(y), X.shape[1], protocol)


# ---------------------------------------------------------------------------
# regression


@dataclass(frozen=True)
class RegressionReport:
    r2: float
    mae: float
    median_true: float
    n_train: int
    n_test: int
    bins: tuple[dict, ...]
    second_r2: float | None = None
    second_mae: float | None = None

    def metric_rows(self) -> list[tuple]:
        rows = [("random_forest", self.r2, self.mae)]
        if self.second_r2 is not None:
            rows.append(("second_model", self.second_r2, self.second_mae))
        return rows


def train_test_split(n: int, ratio: float = 0.8, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Single seeded shuffle; the first ``round(ratio * n)`` rows train."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("split ratio must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    k = int(round(ratio * n))
    return np.sort(perm[:k]), np.sort(perm[k:])


def binned_pairs(y_true, y_pred, n_bins: int = 20, y_second=None) -> list[dict]:
    """Equal-count bins over the sorted true values with mean true and predicted."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    order = np.argsort(y_true, kind="stable")
    rows = []
    for b, members in enumerate(np.array_split(order, min(n_bins, max(len(order), 1)))):
        if len(members) == 0:
            continue
        row = {
            "bin": b,
            "n": int(len(members)),
            "true_min": float(y_true[members].min()),
            "true_max": float(y_true[members].max()),
            "mean_true": float(y_true[members].mean()),
            "mean_pred": float(y_pred[members].mean()),
        }
        if y_second is not None:
            row["mean_pred_second"] = float(np.asarray(y_second, dtype=float)[members].mean())
        rows.append(row)
    return rows


def evaluate_regression(
    data: LabeledDataset,
    params: ForestParams = ForestParams(),
    split_ratio: float = 0.8,
    n_bins: int = 20,
    seed: int = 0,
    second_predictions=None,
):
    """Fit the forest on a seeded 80:20 split and score the held-out rows.

    ``second_predictions`` optionally carries another model's predictions for
    the test rows, so it can be binned alongside. Returns ``(report, model,
    test_rows, test_predictions)``.
    """
    X = np.ascontiguousarray(data.X, dtype=float)
    y = np.asarray(data.target, dtype=float)
    train, test = train_test_split(len(y), split_ratio, seed)
    model = fit_forest(X[train], y[train], params, seed, data.feature_names)
    pred = model.predict(X[test])
    second = None if second_predictions is None else np.asarray(second_predictions, dtype=float)
    report = RegressionReport(
        r2_score(y[test], pred),
        mae(y[test], pred),
        float(np.median(y[test])),
        len(train),
        len(test),
        tuple(binned_pairs(y[test], pred, n_bins, second)),
        None if second is None else r2_score(y[test], second),
        None if second is None else mae(y[test], second),
    )
    return report, model, test, pred
