import numpy as np
import pytest
from scipy.special import expit

from blockprop.learn import kernels
from blockprop.learn.trees import (
    BoostParams,
    ColumnMismatchError,
    ForestParams,
    TrainingError,
    TreeEnsemble,
    fit_boosted,
    fit_boosted_regressor,
    fit_forest,
    logistic_loss,
    presort,
)


def classification_data(rng, n=300, p=6):
    X = rng.normal(size=(n, p)).round(1)
    y = ((X[:, 0] + 0.5 * X[:, 1] ** 2 + rng.normal(scale=0.7, size=n)) > 0.4).astype(float)
    return X, y


def grow(fn, X, g, h, w, depth=4, lam=1.0, mcw=1.0, lr=0.3, mask=None):
    order, xsorted = presort(X)
    use = mask is not None
    mask = mask if use else np.zeros((1, 1), dtype=np.bool_)
    return fn(X, order, xsorted, g, h, w, depth, lam, mcw, lr, mask, use, *kernels.workspace(*X.shape))


def best_stump(X, g, h, lam, mcw):
    """Exhaustive search for the root split under the regularized gain."""
    G, H = g.sum(), h.sum()
    parent = G * G / (H + lam)
    best = (0.0, -1, 0.0)
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for lo, hi in zip(vals[:-1], vals[1:]):
            thr = (lo + hi) / 2
            left = X[:, f] <= thr
            GL, HL = g[left].sum(), h[left].sum()
            GR, HR = G - GL, H - HL
            if HL < mcw or HR < mcw:
                continue
            gain = GL**2 / (HL + lam) + GR**2 / (HR + lam) - parent
            if gain > best[0] + 1e-12:
                best = (gain, f, thr)
    return best


def test_root_split_matches_exhaustive_search(rng):
    for _ in range(5):
        X, y = classification_data(rng, n=120, p=4)
        p = np.full(len(y), y.mean())
        g, h, w = p - y, p * (1 - p), np.ones(len(y))
        feat, thr, left, right, value, cover = grow(kernels.grow_tree, X, g, h, w, depth=1, lr=1.0)
        gain, f, t = best_stump(X, g, h, 1.0, 1.0)
        assert feat[0] == f
        assert thr[0] == pytest.approx(t)
        mask = X[:, f] <= t
        assert value[left[0]] == pytest.approx(-g[mask].sum() / (h[mask].sum() + 1.0))
        assert cover[0] == len(y) and cover[left[0]] == mask.sum()


def test_numba_and_numpy_kernels_agree_bitwise(rng):
    X, y = classification_data(rng)
    p = expit(rng.normal(size=len(y)))
    g, h = p - y, p * (1 - p)
    w = np.ones(len(y))
    a = grow(kernels.grow_tree_numba, X, g, h, w, depth=6)
    b = grow(kernels.grow_tree_numpy, X, g, h, w, depth=6)
    for x, z in zip(a, b):
        assert np.array_equal(x, z)
    # bootstrap weights plus a per-node column mask (the forest path)
    w = np.bincount(rng.integers(0, len(y), size=len(y)), minlength=len(y)).astype(float)
    cap = kernels.node_capacity(int(np.count_nonzero(w)))
    mask = rng.random((cap, X.shape[1])) < 0.5
    a = grow(kernels.grow_tree_numba, X, -y * w, w.copy(), w, depth=8, lam=0.0, lr=1.0, mask=mask)
    b = grow(kernels.grow_tree_numpy, X, -y * w, w.copy(), w, depth=8, lam=0.0, lr=1.0, mask=mask)
    for x, z in zip(a, b):
        assert np.array_equal(x, z)


def test_predict_kernels_agree(rng):
    X, y = classification_data(rng)
    pk = fit_boosted(X, y, BoostParams(n_estimators=20)).packed
    args = (X, pk.feature, pk.threshold, pk.left, pk.right, pk.value)
    assert np.array_equal(kernels.predict_forest_numba(*args), kernels.predict_forest_numpy(*args))


def test_boosting_decreases_training_loss(rng):
    X, y = classification_data(rng)
    losses = []
    model = fit_boosted(X, y, BoostParams(n_estimators=30, max_depth=3), callback=lambda t, m: losses.append(logistic_loss(y, m)))
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
    assert losses[-1] < logistic_loss(y, np.full(len(y), model.base_score))
    assert all(t.depth <= 3 for t in model.trees)
    assert np.allclose(model.margin(X)[: 5], model.base_score + sum(
        kernels.predict_forest(X[:5], t.feature[None], t.threshold[None], t.left[None], t.right[None], t.value[None])
        for t in model.trees
    ))


def test_boosting_is_deterministic_and_serializes(rng, tmp_path):
    X, y = classification_data(rng)
    params = BoostParams(n_estimators=15, subsample=0.7)
    a = fit_boosted(X, y, params, seed=4)
    b = fit_boosted(X, y, params, seed=4)
    assert a.to_json() == b.to_json()
    a.save(tmp_path / "m.json")
    back = TreeEnsemble.load(tmp_path / "m.json")
    assert np.array_equal(back.margin(X), a.margin(X))
    assert back.to_json() == a.to_json()


def test_training_errors(rng):
    X, y = classification_data(rng)
    with pytest.raises(TrainingError):
        fit_boosted(X, np.zeros(len(y)))
    with pytest.raises(TrainingError):
        fit_boosted(X, y * 2)
    model = fit_boosted(X, y, BoostParams(n_estimators=2))
    with pytest.raises(ColumnMismatchError):
        model.margin(X[:, :3])


def test_single_tree_forest_leaves_are_bootstrap_means(rng):
    X = rng.normal(size=(200, 3))
    y = X[:, 0] * 2 + rng.normal(size=200)
    model = fit_forest(X, y, ForestParams(n_estimators=1, max_depth=2, max_features=None), seed=3)
    t = model.trees[0]
    w = np.bincount(np.random.default_rng(3).integers(0, 200, size=200), minlength=200).astype(float)
    assert t.value[0] == pytest.approx(np.sum(w * y) / w.sum())
    assert t.cover[0] == 200


def test_forest_and_boosted_regressor_fit_signal(rng):
    X = rng.normal(size=(400, 5))
    y = 3 * X[:, 0] + np.sin(2 * X[:, 1]) + rng.normal(scale=0.3, size=400)
    forest = fit_forest(X[:300], y[:300], ForestParams(n_estimators=40), seed=1)
    boosted = fit_boosted_regressor(X[:300], y[:300], BoostParams(n_estimators=100, max_depth=3), seed=1)
    for model in (forest, boosted):
        pred = model.predict(X[300:])
        r2 = 1 - np.sum((y[300:] - pred) ** 2) / np.sum((y[300:] - y[300:].mean()) ** 2)
        assert r2 > 0.8
    assert forest.tree_scale == pytest.approx(1 / 40)
