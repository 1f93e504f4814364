import numpy as np
import pytest

from blockprop import graph
from blockprop.events import parse_replay

from conftest import ndjson, rec, ts


def random_graph(rng, n, density=0.1, kind="follows"):
    adj = rng.random((n, n)) < density
    np.fill_diagonal(adj, False)
    src, dst = np.nonzero(adj)
    names = [f"n{i:03d}" for i in range(n)]
    return graph.from_edges(kind, names, [(names[a], names[b]) for a, b in zip(src, dst)]), adj


def dense_pagerank(adj: np.ndarray, d: float = 0.85, iters: int = 5000) -> np.ndarray:
    """Power iteration on the explicit Google matrix."""
    n = adj.shape[0]
    out = adj.sum(axis=1)
    M = np.zeros((n, n))
    for i in range(n):
        M[:, i] = adj[i] / out[i] if out[i] else 1.0 / n
    G = d * M + (1 - d) / n
    x = np.full(n, 1.0 / n)
    for _ in range(iters):
        new = G @ x
        if np.abs(new - x).sum() < 1e-15:
            break
        x = new
    return new


def peeling_coreness(adj: np.ndarray) -> np.ndarray:
    """Quadratic-time peeling on the undirected projection."""
    und = adj | adj.T
    n = len(und)
    core = np.zeros(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    k = 0
    while alive.any():
        deg = (und & alive[None, :]).sum(axis=1)
        low = alive & (deg <= k)
        if not low.any():
            k += 1
            continue
        core[low] = k
        alive &= ~low
    return core


def test_pagerank_matches_dense_oracle(rng):
    for _ in range(10):
        n = int(rng.integers(2, 51))
        g, adj = random_graph(rng, n, density=float(rng.uniform(0.02, 0.3)))
        pr = graph.pagerank_vector(g)
        assert np.allclose(pr, dense_pagerank(adj), atol=1e-8, rtol=0)
        assert abs(pr.sum() - 1.0) <= 1e-9


def test_pagerank_edge_cases():
    empty = graph.from_edges("follows", ["a", "b", "c"], [])
    assert np.allclose(graph.pagerank_vector(empty), 1 / 3)
    assert graph.pagerank_vector(graph.from_edges("follows", [], [])).size == 0
    with pytest.raises(ValueError):
        graph.pagerank_vector(empty, damping=1.0)


def test_coreness_matches_peeling_oracle(rng):
    for _ in range(10):
        n = int(rng.integers(1, 201))
        g, adj = random_graph(rng, n, density=float(rng.uniform(0.005, 0.08)))
        expected = peeling_coreness(adj)
        assert np.array_equal(graph.coreness_vector(g), expected)
        ip, ix = graph.undirected_csr(g)
        assert np.array_equal(np.asarray(graph.core_numbers_numpy(ip, ix)), expected)
        assert np.array_equal(np.asarray(graph.core_numbers_python(ip, ix)), expected)


def test_coreness_of_clique_with_tail():
    names = list("abcde")
    edges = [(x, y) for x in "abcd" for y in "abcd" if x < y] + [("d", "e")]
    g = graph.from_edges("likes", names, edges)
    assert graph.coreness(g) == {"a": 3, "b": 3, "c": 3, "d": 3, "e": 1}


def test_degree_collapses_repeats_and_self_loops():
    g = graph.from_edges("likes", ["a", "b", "c"], [("a", "b"), ("a", "b"), ("b", "a"), ("c", "c")])
    assert graph.total_degree(g) == {"a": 2, "b": 2, "c": 0}


def test_build_graph_uses_creates_only():
    records = [
        rec("f1", "follow", actor="a", subject="b"),
        rec("f2", "follow", "delete", actor="a", subject="c", ts=ts(1, 1)),
        rec("r1", "reply", actor="c", subject="a", ts=ts(1, 2)),
    ]
    log = parse_replay(ndjson(records))
    follows = graph.build_graph(log, "follows")
    assert follows.nodes == ("a", "b", "c")
    assert follows.n_edges == 1
    replies = graph.build_graph(log, "replies")
    assert graph.total_degree(replies) == {"a": 1, "b": 0, "c": 1}


def test_graph_feature_block_columns(small_corpus):
    *_, log, _, fm = small_corpus
    block = graph.graph_feature_block(log, fm.users)
    assert set(block) == {n for n, g in zip(fm.names, fm.manifest.groups) if g == "Graph"}
    for name, col in block.items():
        assert np.array_equal(col, fm.column(name)), name
