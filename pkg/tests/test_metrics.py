import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blockprop.learn.metrics import MetricError, mae, pearson, r2_score, roc_auc


def pairwise_auc(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (len(pos) * len(neg))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 8), st.booleans()), min_size=2, max_size=80))
def test_auc_matches_pairwise_oracle(pairs):
    s = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs], dtype=int)
    if y.min() == y.max():
        with pytest.raises(MetricError):
            roc_auc(s, y)
        return
    assert roc_auc(s, y) == pytest.approx(pairwise_auc(s, y), abs=1e-12)


def test_auc_extremes():
    y = np.array([0, 0, 1, 1])
    assert roc_auc(np.array([0.1, 0.2, 0.8, 0.9]), y) == 1.0
    assert roc_auc(np.array([0.9, 0.8, 0.2, 0.1]), y) == 0.0
    assert roc_auc(np.ones(4), y) == 0.5


def test_mae_and_r2_formulas():
    y = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    p = np.array([1.5, 2.0, 2.0, 5.0, 4.0])
    assert mae(y, p) == (0.5 + 0 + 1 + 1 + 1) / 5
    assert r2_score(y, p) == pytest.approx(1 - (0.25 + 0 + 1 + 1 + 1) / 10.0)
    assert r2_score(y, y) == 1.0
    assert r2_score(np.ones(3), np.ones(3)) == 1.0
    assert pearson(y, 2 * y + 1) == pytest.approx(1.0)


def test_backend_flag_selects_numpy_fallback():
    code = "from blockprop import _accel; from blockprop.learn import kernels; print(_accel.backend(), kernels.grow_tree is kernels.grow_tree_numpy)"
    env = {**os.environ, "BLOCKPROP_NUMBA": "0"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout
    assert out.split() == ["numpy", "True"]
    env["BLOCKPROP_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout
    assert out.split() == ["numba", "False"]
