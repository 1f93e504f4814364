"""Directed interaction graphs and per-user centralities."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _accel
from .events import EventLog

GRAPH_KINDS = {"follows": "follow", "likes": "like", "replies": "reply", "reposts": "repost"}


@dataclass(frozen=True, eq=False)
class InteractionGraph:
    """Simple directed graph over ``nodes``; edges stored as sorted index pairs."""

    kind: str
    nodes: tuple[str, ...]
    src: np.ndarray
    dst: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def edges(self) -> set[tuple[str, str]]:
        return {(self.nodes[a], self.nodes[b]) for a, b in zip(self.src.tolist(), self.dst.tolist())}

    def to_map(self, values) -> dict:
        return {u: v for u, v in zip(self.nodes, np.asarray(values).tolist())}

    def edge_list_tsv(self) -> str:
        return "".join(f"{self.nodes[a]}\t{self.nodes[b]}\n" for a, b in zip(self.src.tolist(), self.dst.tolist()))

    def write_edge_list(self, path: str | os.PathLike) -> None:
        from .io import atomic_write_text

        atomic_write_text(path, "src\tdst\n" + self.edge_list_tsv())


def from_edges(kind: str, nodes, edges) -> InteractionGraph:
    """Build a graph from explicit ``(src, dst)`` node-name pairs."""
    nodes = tuple(nodes)
    index = {u: i for i, u in enumerate(nodes)}
    pairs = np.array([(index[a], index[b]) for a, b in edges], dtype=np.int64).reshape(-1, 2)
    return _simple(kind, nodes, pairs[:, 0], pairs[:, 1])


def _simple(kind, nodes, src, dst) -> InteractionGraph:
    keep = src != dst
    src, dst = src[keep], dst[keep]
    if len(src):
        pairs = np.unique(np.stack([src, dst], axis=1), axis=0)
        src, dst = pairs[:, 0].copy(), pairs[:, 1].copy()
    return InteractionGraph(kind, nodes, src.astype(np.int64), dst.astype(np.int64))


def build_graph(log: EventLog, kind: str) -> InteractionGraph:
    """Graph of ``actor -> subject_user`` over create events of one interaction kind.

    Nodes are all users of the log, so isolated users still get centralities.
    Deletes do not remove edges and repeated interactions collapse to one edge.
    """
    ev_kind = GRAPH_KINDS[kind]
    sel = log.mask(ev_kind, "create") & (log.subject_idx >= 0)
    return _simple(kind, log.users, log.actor_idx[sel], log.subject_idx[sel])


# ---------------------------------------------------------------------------
# PageRank


def pagerank_vector(g: InteractionGraph, damping: float = 0.85, tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    if not 0.0 < damping < 1.0:
        raise ValueError("damping must lie in (0, 1)")
    n = g.n_nodes
    if n == 0:
        return np.zeros(0)
    out_deg = np.bincount(g.src, minlength=n).astype(float)
    dangling = out_deg == 0
    weights = 1.0 / out_deg[g.src]
    # column-stochastic transition: x_new[dst] += x[src] / outdeg[src]
    trans = sp.csr_matrix((weights, (g.dst, g.src)), shape=(n, n))
    x = np.full(n, 1.0 / n)
    teleport = (1.0 - damping) / n
    for _ in range(max_iter):
        new = damping * (trans @ x + x[dangling].sum() / n) + teleport
        new /= new.sum()
        delta = np.abs(new - x).sum()
        x = new
        if delta < tol:
            break
    return x


def pagerank(g: InteractionGraph, damping: float = 0.85, tol: float = 1e-10, max_iter: int = 200) -> dict[str, float]:
    """Power-iteration PageRank with uniform teleport and dangling redistribution."""
    return g.to_map(pagerank_vector(g, damping, tol, max_iter))


# ---------------------------------------------------------------------------
# Coreness


def undirected_csr(g: InteractionGraph) -> tuple[np.ndarray, np.ndarray]:
    """CSR adjacency (indptr, indices) of the undirected simple projection."""
    n = g.n_nodes
    a = np.concatenate([g.src, g.dst])
    b = np.concatenate([g.dst, g.src])
    if len(a):
        pairs = np.unique(np.stack([a, b], axis=1), axis=0)
        a, b = pairs[:, 0], pairs[:, 1]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(a, minlength=n), out=indptr[1:])
    return indptr, b.astype(np.int64)


def _core_numbers_bz(indptr, indices):
    # Batagelj-Zaversnik bucket peeling, O(m)
    n = indptr.shape[0] - 1
    deg = np.empty(n, dtype=np.int64)
    md = 0
    for v in range(n):
        deg[v] = indptr[v + 1] - indptr[v]
        if deg[v] > md:
            md = deg[v]
    bins = np.zeros(md + 1, dtype=np.int64)
    for v in range(n):
        bins[deg[v]] += 1
    start = 0
    for d in range(md + 1):
        num = bins[d]
        bins[d] = start
        start += num
    pos = np.empty(n, dtype=np.int64)
    vert = np.empty(n, dtype=np.int64)
    for v in range(n):
        pos[v] = bins[deg[v]]
        vert[pos[v]] = v
        bins[deg[v]] += 1
    for d in range(md, 0, -1):
        bins[d] = bins[d - 1]
    if md >= 0 and n > 0:
        bins[0] = 0
    for i in range(n):
        v = vert[i]
        for j in range(indptr[v], indptr[v + 1]):
            u = indices[j]
            if deg[u] > deg[v]:
                du = deg[u]
                pu = pos[u]
                pw = bins[du]
                w = vert[pw]
                if u != w:
                    pos[u] = pw
                    vert[pu] = w
                    pos[w] = pu
                    vert[pw] = u
                bins[du] += 1
                deg[u] -= 1
    return deg


def _core_numbers_numpy(indptr, indices):
    # vectorized level-by-level peeling
    n = indptr.shape[0] - 1
    deg = np.diff(indptr).astype(np.int64)
    owner = np.repeat(np.arange(n), np.diff(indptr))
    alive = np.ones(n, dtype=bool)
    core = np.zeros(n, dtype=np.int64)
    k = 0
    while alive.any():
        peel = alive & (deg <= k)
        if not peel.any():
            k = int(deg[alive].min())
            continue
        while peel.any():
            core[peel] = k
            alive &= ~peel
            hit = peel[owner]
            deg -= np.bincount(indices[hit], minlength=n)
            peel = alive & (deg <= k)
    return core


core_numbers_numba = _accel.njit(_core_numbers_bz)
core_numbers_python = _core_numbers_bz
core_numbers_numpy = _core_numbers_numpy
core_numbers = _accel.pick(core_numbers_numba, _core_numbers_numpy)


def coreness_vector(g: InteractionGraph) -> np.ndarray:
    indptr, indices = undirected_csr(g)
    return np.asarray(core_numbers(indptr, indices), dtype=np.int64)


def coreness(g: InteractionGraph) -> dict[str, int]:
    """k-core number of every node on the undirected projection."""
    return g.to_map(coreness_vector(g))


# ---------------------------------------------------------------------------
# Degree


def total_degree_vector(g: InteractionGraph) -> np.ndarray:
    n = g.n_nodes
    return np.bincount(g.src, minlength=n) + np.bincount(g.dst, minlength=n)


def total_degree(g: InteractionGraph) -> dict[str, int]:
    """In-degree plus out-degree on the simple directed graph."""
    return g.to_map(total_degree_vector(g))


@dataclass(frozen=True, eq=False)
class CentralityTable:
    kind: str
    nodes: tuple[str, ...]
    coreness: np.ndarray
    total_degree: np.ndarray
    pagerank: np.ndarray


def centralities(g: InteractionGraph, damping: float = 0.85, tol: float = 1e-10, max_iter: int = 200) -> CentralityTable:
    return CentralityTable(
        g.kind,
        g.nodes,
        coreness_vector(g),
        total_degree_vector(g),
        pagerank_vector(g, damping, tol, max_iter),
    )


def graph_feature_block(log: EventLog, users, damping: float = 0.85, tol: float = 1e-10, max_iter: int = 200) -> dict[str, np.ndarray]:
    """Graph feature columns for ``users``, keyed by manifest name."""
    idx = np.array([log.user_index[u] for u in users], dtype=np.int64)
    out = {}
    for kind in GRAPH_KINDS:
        table = centralities(build_graph(log, kind), damping, tol, max_iter)
        out[f"{kind}_coreness"] = table.coreness[idx].astype(float)
        out[f"{kind}_degree"] = table.total_degree[idx].astype(float)
        out[f"{kind}_pagerank"] = table.pagerank[idx]
    return out
