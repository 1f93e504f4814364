"""Compare the numba and pure-numpy backends of the hot kernels.

Both implementations are imported side by side (the ``BLOCKPROP_NUMBA``
flag only picks the default), timed on the same inputs and checked for
agreement. Run::

    python3 benchmarks/bench_kernels.py [--rows 900] [--repeat 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from blockprop import _accel, graph
from blockprop.learn import kernels
from blockprop.learn.trees import BoostParams, fit_boosted, presort


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def tree_inputs(n: int, p: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p)).round(2)
    y = (X[:, 0] + X[:, 1] * X[:, 2] + rng.normal(scale=0.5, size=n) > 0).astype(float)
    prob = np.full(n, y.mean())
    g, h, w = prob - y, prob * (1 - prob), np.ones(n)
    return X, y, g, h, w


def bench_grow(n, p, repeat):
    X, _, g, h, w = tree_inputs(n, p)
    order, xsorted = presort(X)
    work = kernels.workspace(n, p)
    mask = np.zeros((1, 1), dtype=np.bool_)
    args = (X, order, xsorted, g, h, w, 6, 1.0, 1.0, 0.1, mask, False)
    out = {}
    results = {}
    for name, fn in (("numba", kernels.grow_tree_numba), ("numpy", kernels.grow_tree_numpy)):
        results[name] = fn(*args, *work)
        out[name] = best_of(lambda: fn(*args, *work), repeat)
    agree = all(np.array_equal(a, b) for a, b in zip(results["numba"], results["numpy"]))
    return out, agree


def bench_shap(n, p, repeat):
    X, y, *_ = tree_inputs(n, p, seed=1)
    model = fit_boosted(X, y, BoostParams(n_estimators=50, max_depth=6))
    pk = model.packed
    args = (X, pk.feature, pk.threshold, pk.left, pk.right, pk.value, pk.cover, pk.max_depth, 1.0)
    out, results = {}, {}
    for name, fn in (("numba", kernels.tree_shap_numba), ("numpy", kernels.tree_shap_numpy)):
        results[name] = fn(*args)
        out[name] = best_of(lambda: fn(*args), repeat)
    return out, float(np.max(np.abs(results["numba"] - results["numpy"])))


def bench_predict(n, p, repeat):
    X, y, *_ = tree_inputs(n, p, seed=2)
    pk = fit_boosted(X, y, BoostParams(n_estimators=100)).packed
    args = (X, pk.feature, pk.threshold, pk.left, pk.right, pk.value)
    out, results = {}, {}
    for name, fn in (("numba", kernels.predict_forest_numba), ("numpy", kernels.predict_forest_numpy)):
        results[name] = fn(*args)
        out[name] = best_of(lambda: fn(*args), repeat)
    return out, float(np.max(np.abs(results["numba"] - results["numpy"])))


def bench_coreness(n_nodes, repeat):
    rng = np.random.default_rng(3)
    src = rng.integers(0, n_nodes, size=8 * n_nodes)
    dst = (src + 1 + rng.zipf(1.8, size=src.size)) % n_nodes
    names = [f"u{i}" for i in range(n_nodes)]
    g = graph.from_edges("follow", names, [(names[a], names[b]) for a, b in zip(src.tolist(), dst.tolist())])
    indptr, indices = graph.undirected_csr(g)
    out, results = {}, {}
    for name, fn in (("numba", graph.core_numbers_numba), ("numpy", graph.core_numbers_numpy)):
        results[name] = np.asarray(fn(indptr, indices))
        out[name] = best_of(lambda: fn(indptr, indices), repeat)
    return out, bool(np.array_equal(results["numba"], results["numpy"]))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--rows", type=int, default=900)
    ap.add_argument("--features", type=int, default=80)
    ap.add_argument("--nodes", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    print(f"default backend: {_accel.backend()}")
    print(f"{'kernel':<16}{'numba s':>12}{'numpy s':>12}{'speedup':>10}  agreement")
    rows = [
        ("grow_tree", *bench_grow(args.rows, args.features, args.repeat)),
        ("tree_shap", *bench_shap(args.rows, args.features, args.repeat)),
        ("predict_forest", *bench_predict(args.rows, args.features, args.repeat)),
        ("coreness", *bench_coreness(args.nodes, args.repeat)),
    ]
    for name, t, agree in rows:
        note = ("exact" if agree else "MISMATCH") if isinstance(agree, bool) else f"max |diff| {agree:.2e}"
        print(f"{name:<16}{t['numba']:>12.5f}{t['numpy']:>12.5f}{t['numpy'] / t['numba']:>9.1f}x  {note}")


if __name__ == "__main__":
    main()
