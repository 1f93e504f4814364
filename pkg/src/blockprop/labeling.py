"""Block-count targets, quantile labels and class balancing."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .events import EventLog
from .features.engine import FeatureMatrix
from .io import atomic_write_text, dumps_json, meta_path, read_csv, write_csv

DEFINITIONS = ("raw", "norm")
DEFAULT_QUANTILES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.995, 0.9995)
# Columns that restate the target and would leak it into the model.
TARGET_COLUMNS = ("times_blocked",)
# Guards ceil(q * n) against q * n landing a hair above an integer.
_QUANTILE_EPS = 1e-9


class DegenerateThresholdError(ValueError):
    """The quantile threshold leaves the positive class empty."""


class BalanceError(ValueError):
    pass


def _definition(name: str) -> str:
    if name in ("norm", "normalized"):
        return "norm"
    if name == "raw":
        return "raw"
    raise ValueError(f"unknown target definition {name!r}")


@dataclass(frozen=True)
class TargetSpec:
    definition: str = "raw"
    quantile: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "definition", _definition(self.definition))
        if self.quantile is not None and not 0.0 < self.quantile < 1.0:
            raise ValueError("quantile must lie in (0, 1)")

    def as_dict(self) -> dict:
        return {"definition": self.definition, "quantile": self.quantile}


@dataclass(frozen=True, eq=False)
class Targets:
    users: tuple[str, ...]
    raw: np.ndarray
    norm: np.ndarray
    posts: np.ndarray

    def get(self, definition: str) -> np.ndarray:
        return self.raw if _definition(definition) == "raw" else self.norm


def compute_targets(matrix: FeatureMatrix, log: EventLog) -> Targets:
    """raw = block creates received; norm = raw / posts_created."""
    users = matrix.users
    n_users = len(log.users)
    sel = log.mask("block", "create") & (log.subject_idx >= 0)
    received = np.bincount(log.subject_idx[sel], minlength=n_users)
    sel = log.mask(("post", "reply"), "create")
    posts = np.bincount(log.actor_idx[sel], minlength=n_users)
    idx = np.array([log.user_index[u] for u in users], dtype=np.int64)
    raw = received[idx].astype(float) if len(idx) else np.zeros(0)
    n_posts = posts[idx].astype(float) if len(idx) else np.zeros(0)
    if np.any(n_posts == 0):
        raise ValueError("normalized target needs at least one post per user")
    return Targets(tuple(users), raw, raw / n_posts if len(idx) else np.zeros(0), n_posts)


def quantile_threshold(values, q: float) -> float:
    """Order statistic at rank ceil(q * n), without interpolation."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("cannot threshold an empty target")
    k = max(1, math.ceil(q * v.size - _QUANTILE_EPS))
    return float(v[min(k, v.size) - 1])


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Model inputs plus target.

    ``y`` is the 0/1 label for classification datasets and the continuous
    target otherwise.
    """

    users: tuple[str, ...]
    feature_names: tuple[str, ...]
    feature_groups: tuple[str, ...]
    X: np.ndarray
    target: np.ndarray
    spec: TargetSpec
    label: np.ndarray | None = None
    threshold_value: float | None = None
    target_raw: np.ndarray | None = None
    target_norm: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def y(self) -> np.ndarray:
        return self.label if self.label is not None else self.target

    @property
    def is_classification(self) -> bool:
        return self.label is not None

    def __len__(self) -> int:
        return len(self.users)

    def class_counts(self) -> tuple[int, int]:
        if self.label is None:
            raise ValueError("not a classification dataset")
        n_pos = int(self.label.sum())
        return len(self.label) - n_pos, n_pos

    def take(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows, dtype=np.int64)

        def cut(a):
            return None if a is None else a[rows]

        return replace(
            self,
            users=tuple(self.users[i] for i in rows.tolist()),
            X=self.X[rows],
            target=self.target[rows],
            label=cut(self.label),
            target_raw=cut(self.target_raw),
            target_norm=cut(self.target_norm),
        )

    def select(self, names: Sequence[str]) -> "LabeledDataset":
        """Restrict to the given feature columns, keeping manifest order."""
        wanted = set(names)
        unknown = wanted - set(self.feature_names)
        if unknown:
            raise KeyError(f"unknown features {sorted(unknown)}")
        cols = [j for j, n in enumerate(self.feature_names) if n in wanted]
        return replace(
            self,
            feature_names=tuple(self.feature_names[j] for j in cols),
            feature_groups=tuple(self.feature_groups[j] for j in cols),
            X=self.X[:, cols],
        )

    def group_columns(self, group: str) -> tuple[str, ...]:
        return tuple(n for n, g in zip(self.feature_names, self.feature_groups) if g == group)

    def to_csv(self, path: str | os.PathLike, extra_meta: dict | None = None) -> None:
        header = ("user_id",) + self.feature_names + ("target_raw", "target_norm")
        if self.label is not None:
            header += ("label",)
        raw = self.target_raw if self.target_raw is not None else np.full(len(self), np.nan)
        norm = self.target_norm if self.target_norm is not None else np.full(len(self), np.nan)

        def rows():
            for i, u in enumerate(self.users):
                row = [u, *self.X[i].tolist(), float(raw[i]), float(norm[i])]
                if self.label is not None:
                    row.append(int(self.label[i]))
                yield row

        write_csv(path, header, rows())
        meta = {
            **self.meta,
            "spec": self.spec.as_dict(),
            "threshold_value": self.threshold_value,
            "feature_groups": list(self.feature_groups),
            **(extra_meta or {}),
        }
        atomic_write_text(meta_path(path), dumps_json(meta))


def load_dataset(path: str | os.PathLike) -> LabeledDataset:
    """Read a dataset written by :meth:`LabeledDataset.to_csv`."""
    header, rows = read_csv(path)
    meta = json.loads(meta_path(path).read_text(encoding="utf-8"))
    has_label = header[-1] == "label"
    n_feat = len(header) - 3 - int(has_label)
    names = tuple(header[1 : 1 + n_feat])
    values = np.array([[float(x) for x in r[1:]] for r in rows], dtype=float).reshape(len(rows), len(header) - 1)
    spec = TargetSpec(**meta.pop("spec"))
    raw = values[:, n_feat]
    norm = values[:, n_feat + 1]
    label = values[:, n_feat + 2].astype(np.int64) if has_label else None
    groups = tuple(meta.pop("feature_groups"))
    threshold = meta.pop("threshold_value")
    return LabeledDataset(
        tuple(r[0] for r in rows),
        names,
        groups,
        np.ascontiguousarray(values[:, :n_feat]),
        (raw if spec.definition == "raw" else norm).copy(),
        spec,
        label,
        threshold,
        raw,
        norm,
        meta,
    )


def _inputs(matrix: FeatureMatrix, exclude: Sequence[str]) -> tuple[tuple[str, ...], tuple[str, ...], np.ndarray]:
    keep = [j for j, n in enumerate(matrix.names) if n not in exclude]
    names = tuple(matrix.names[j] for j in keep)
    groups = tuple(matrix.manifest.groups[j] for j in keep)
    return names, groups, np.ascontiguousarray(matrix.values[:, keep])


def regression_dataset(
    matrix: FeatureMatrix, targets: Targets, definition: str = "raw", exclude: Sequence[str] = TARGET_COLUMNS
) -> LabeledDataset:
    if targets.users != matrix.users:
        raise ValueError("targets and matrix rows are not aligned")
    spec = TargetSpec(definition)
    names, groups, X = _inputs(matrix, exclude)
    return LabeledDataset(
        matrix.users, names, groups, X, targets.get(spec.definition).copy(), spec,
        target_raw=targets.raw, target_norm=targets.norm, meta={"manifest_version": matrix.manifest.version},
    )


def threshold_labels(
    matrix: FeatureMatrix, targets: Targets, spec: TargetSpec, exclude: Sequence[str] = TARGET_COLUMNS
) -> LabeledDataset:
    """Label users whose target is strictly above the quantile threshold.

    Raises
    ------
    DegenerateThresholdError
        If no user lies above the threshold.
    """
    if spec.quantile is None:
        raise ValueError("classification needs a quantile")
    base = regression_dataset(matrix, targets, spec.definition, exclude)
    thr = quantile_threshold(base.target, spec.quantile)
    label = (base.target > thr).astype(np.int64)
    if label.sum() == 0:
        raise DegenerateThresholdError(
            f"quantile {spec.quantile} of {spec.definition} target gives threshold {thr!r} with no user above it"
        )
    return replace(base, spec=spec, label=label, threshold_value=thr)


def labels_from_values(values, q: float) -> tuple[np.ndarray, float]:
    """Array-level variant of :func:`threshold_labels`."""
    v = np.asarray(values, dtype=float)
    thr = quantile_threshold(v, q)
    label = (v > thr).astype(np.int64)
    if label.sum() == 0:
        raise DegenerateThresholdError(f"quantile {q} leaves no positive")
    return label, thr


def balanced_rows(label: np.ndarray, seed) -> np.ndarray:
    """Row indices keeping every minority sample and an equal random draw of the majority."""
    label = np.asarray(label)
    pos = np.flatnonzero(label == 1)
    neg = np.flatnonzero(label == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise BalanceError("undersampling needs both classes")
    rng = np.random.default_rng(seed)
    if len(pos) > len(neg):
        pos = np.sort(rng.choice(pos, size=len(neg), replace=False))
    elif len(neg) > len(pos):
        neg = np.sort(rng.choice(neg, size=len(pos), replace=False))
    return np.sort(np.concatenate([pos, neg]))


def undersample_balance(data: LabeledDataset, seed) -> LabeledDataset:
    """Drop random majority-class rows until both classes have equal size."""
    if data.label is None:
        raise BalanceError("undersampling needs a classification dataset")
    return data.take(balanced_rows(data.label, seed))


def permute_labels(data: LabeledDataset, seed) -> LabeledDataset:
    """Same dataset with labels shuffled (chance-level control)."""
    if data.label is None:
        raise ValueError("not a classification dataset")
    rng = np.random.default_rng(seed)
    return replace(data, label=rng.permutation(data.label))


def sweep(
    matrix: FeatureMatrix, targets: Targets, definition: str, quantiles: Sequence[float] = DEFAULT_QUANTILES
) -> dict[float, LabeledDataset | DegenerateThresholdError]:
    """Dataset per quantile, or the degenerate-threshold error it raised."""
    out: dict[float, LabeledDataset | DegenerateThresholdError] = {}
    for q in quantiles:
        try:
            out[q] = threshold_labels(matrix, targets, TargetSpec(definition, q))
        except DegenerateThresholdError as exc:
            out[q] = exc
    return out


def ecdf(values) -> tuple[np.ndarray, np.ndarray]:
    """Distinct sorted values and the fraction of samples at or below each."""
    v = np.sort(np.asarray(values, dtype=float))
    xs, counts = np.unique(v, return_counts=True)
    return xs, np.cumsum(counts) / max(v.size, 1)
