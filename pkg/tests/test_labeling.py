import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blockprop.events import parse_replay
from blockprop.features import UserFilter, build_matrix
from blockprop.labeling import (
    DEFAULT_QUANTILES,
    BalanceError,
    DegenerateThresholdError,
    TargetSpec,
    balanced_rows,
    compute_targets,
    ecdf,
    labels_from_values,
    load_dataset,
    permute_labels,
    quantile_threshold,
    regression_dataset,
    sweep,
    threshold_labels,
    undersample_balance,
)

from conftest import ndjson, rec, ts


def test_quantile_threshold_is_an_order_statistic():
    v = [5, 1, 4, 2, 3, 6, 8, 7, 9, 10]
    assert quantile_threshold(v, 0.5) == 5
    assert quantile_threshold(v, 0.9) == 9
    assert quantile_threshold(v, 0.95) == 10
    assert quantile_threshold(v, 0.01) == 1
    # 0.7 * 10 evaluates to 7.000000000000001 in binary floating point
    assert quantile_threshold(v, 0.7) == 7


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=1, max_size=50), st.floats(0.01, 0.99))
def test_threshold_labels_count_strictly_above(values, q):
    v = np.array(values, dtype=float)
    thr = quantile_threshold(v, q)
    assert np.sum(v <= thr) >= math.ceil(q * len(v) - 1e-9)
    try:
        label, thr2 = labels_from_values(v, q)
    except DegenerateThresholdError:
        assert v.max() == thr
        return
    assert thr2 == thr
    assert np.array_equal(label, (v > thr).astype(int))


def test_balanced_rows_keeps_minority_and_equalizes():
    label = np.array([1, 0, 0, 0, 1, 0, 0, 0, 0, 1])
    rows = balanced_rows(label, seed=3)
    assert np.array_equal(np.sort(rows), rows)
    assert set(np.flatnonzero(label == 1)) <= set(rows.tolist())
    assert label[rows].sum() == 3 and len(rows) == 6
    assert np.array_equal(rows, balanced_rows(label, seed=3))
    with pytest.raises(BalanceError):
        balanced_rows(np.zeros(4, dtype=int), 0)


def build_small():
    records = []
    blocks = {"u0": 0, "u1": 1, "u2": 2, "u3": 5, "u4": 9}
    n = 0
    for u, k in blocks.items():
        for i in range(10 + int(u[1])):
            records.append(rec(f"{u}-p{i}", actor=u, ts=ts(1, i % 60), langs=["en"]))
        for b in range(k):
            records.append(rec(f"blk{n}", "block", actor=f"x{b}", subject=u, ts=ts(2, b)))
            n += 1
    log = parse_replay(ndjson(records))
    fm = build_matrix(log, UserFilter())
    return log, fm


def test_targets_raw_and_normalized():
    log, fm = build_small()
    t = compute_targets(fm, log)
    assert t.users == ("u0", "u1", "u2", "u3", "u4")
    assert t.raw.tolist() == [0, 1, 2, 5, 9]
    assert t.posts.tolist() == [10, 11, 12, 13, 14]
    assert np.allclose(t.norm, t.raw / t.posts)
    assert np.array_equal(fm.column("times_blocked"), t.raw)


def test_target_column_is_excluded_from_inputs(tmp_path):
    log, fm = build_small()
    t = compute_targets(fm, log)
    data = threshold_labels(fm, t, TargetSpec("raw", 0.6))
    assert "times_blocked" not in data.feature_names
    assert data.X.shape == (5, 80)
    assert data.threshold_value == 2 and data.label.tolist() == [0, 0, 0, 1, 1]
    data.to_csv(tmp_path / "d.csv")
    back = load_dataset(tmp_path / "d.csv")
    assert back.feature_names == data.feature_names and back.feature_groups == data.feature_groups
    assert np.array_equal(back.X, data.X) and np.array_equal(back.label, data.label)
    assert back.threshold_value == data.threshold_value and back.spec == data.spec


def test_sweep_reports_degenerate_thresholds():
    log, fm = build_small()
    t = compute_targets(fm, log)
    out = sweep(fm, t, "normalized", DEFAULT_QUANTILES)
    assert set(out) == set(DEFAULT_QUANTILES)
    assert isinstance(out[0.9995], DegenerateThresholdError)
    assert out[0.5].spec.definition == "norm"
    assert out[0.5].label.sum() == 2


def test_undersample_and_permute():
    log, fm = build_small()
    data = threshold_labels(fm, compute_targets(fm, log), TargetSpec("raw", 0.6))
    bal = undersample_balance(data, seed=1)
    assert bal.class_counts() == (2, 2)
    perm = permute_labels(data, seed=1)
    assert sorted(perm.label) == sorted(data.label)
    reg = regression_dataset(fm, compute_targets(fm, log))
    assert not reg.is_classification and reg.y.tolist() == [0, 1, 2, 5, 9]


def test_ecdf():
    xs, fr = ecdf([3, 1, 1, 2])
    assert xs.tolist() == [1, 2, 3]
    assert fr.tolist() == [0.5, 0.75, 1.0]
