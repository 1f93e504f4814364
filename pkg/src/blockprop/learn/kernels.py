"""Hot loops for tree growth, forest prediction and TreeSHAP.

Every kernel has a compiled variant (``*_numba``) and a fallback; the
module-level name without suffix is the one selected by ``BLOCKPROP_NUMBA``.
Both variants accumulate in the same order, so they agree bit for bit on
the same inputs (checked in the test suite).

Trees are stored as flat node arrays in breadth-first order; ``feature < 0``
marks a leaf and samples with ``x <= threshold`` go left.
"""

from __future__ import annotations

import numpy as np

from .. import _accel


def node_capacity(n_in: int) -> int:
    """Upper bound on the node count of a binary tree over ``n_in`` samples."""
    return 2 * max(n_in, 1) + 1


def workspace(n: int, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Scratch buffers for :func:`grow_tree`, reusable across trees of one fit."""
    return np.empty((2, p, n), dtype=np.int64), np.empty((2, p, n))


# ---------------------------------------------------------------------------
# split search / tree growth


def _grow_tree_loop(X, order, xsorted, g, h, w, max_depth, lam, min_child_weight, lr, colmask, use_colmask, work_i, work_x):
    # Presorted-partition growth: for every feature, ``idx[f]`` holds the
    # in-tree samples grouped by node and sorted by value inside each node.
    n, p = X.shape
    n_in = 0
    for i in range(n):
        if w[i] > 0.0:
            n_in += 1
    cap = 2 * max(n_in, 1) + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    cover = np.zeros(cap)
    gsum = np.zeros(cap)
    hsum = np.zeros(cap)
    node_of = np.full(n, -1, dtype=np.int64)
    # two caller-owned buffers used alternately, so growing a tree does not
    # allocate (and page-fault) large arrays
    idx = work_i[0]
    xv = work_x[0]
    idx2 = work_i[1]
    xv2 = work_x[1]
    for f in range(p):
        m = 0
        for j in range(n):
            i = order[f, j]
            if w[i] > 0.0:
                idx[f, m] = i
                xv[f, m] = xsorted[f, j]
                m += 1
    for i in range(n):
        if w[i] > 0.0:
            node_of[i] = 0
    seg = np.zeros(cap + 1, dtype=np.int64)
    seg[1] = n_in
    ls = 0
    le = 1
    n_nodes = 1
    depth = 0
    go_left = np.zeros(n, dtype=np.bool_)
    while ls < le:
        for i in range(n):
            k = node_of[i]
            if k >= 0:
                gsum[k] += g[i]
                hsum[k] += h[i]
                cover[k] += w[i]
        if depth >= max_depth:
            break
        n_split = 0
        for k in range(ls, le):
            a = seg[k - ls]
            b = seg[k - ls + 1]
            G = gsum[k]
            H = hsum[k]
            parent = G * G / (H + lam)
            best = 0.0
            best_f = -1
            best_t = 0.0
            if b - a >= 2 and H >= 2.0 * min_child_weight:
                for f in range(p):
                    if use_colmask and not colmask[k, f]:
                        continue
                    gl = 0.0
                    hl = 0.0
                    last = -np.inf
                    for j in range(a, b):
                        i = idx[f, j]
                        x = xv[f, j]
                        if x > last and hl >= min_child_weight:
                            hr = H - hl
                            if hr >= min_child_weight:
                                gr = G - gl
                                gain = gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent
                                if gain > best:
                                    best = gain
                                    best_f = f
                                    thr = last + (x - last) * 0.5
                                    if thr >= x:
                                        thr = last
                                    best_t = thr
                        gl += g[i]
                        hl += h[i]
                        last = x
            if best_f >= 0 and best > 1e-12 * (1.0 + parent):
                feature[k] = best_f
                threshold[k] = best_t
                left[k] = n_nodes
                right[k] = n_nodes + 1
                n_nodes += 2
                n_split += 1
        # route samples and build child segments
        for i in range(n):
            k = node_of[i]
            if k < 0:
                continue
            f = feature[k]
            if f < 0:
                node_of[i] = -1
            elif X[i, f] <= threshold[k]:
                node_of[i] = left[k]
                go_left[i] = True
            else:
                node_of[i] = right[k]
                go_left[i] = False
        if n_split == 0:
            ls = le
            break
        if depth + 1 >= max_depth:
            # children are leaves; only their totals are needed
            ls = le
            le = n_nodes
            depth += 1
            continue
        n_child = n_nodes - le
        counts = np.zeros(n_child, dtype=np.int64)
        for i in range(n):
            k = node_of[i]
            if k >= le:
                counts[k - le] += 1
        new_seg = np.zeros(n_child + 1, dtype=np.int64)
        for c in range(n_child):
            new_seg[c + 1] = new_seg[c] + counts[c]
        fill = np.empty(n_child, dtype=np.int64)
        for f in range(p):
            for c in range(n_child):
                fill[c] = new_seg[c]
            for j in range(seg[le - ls]):
                i = idx[f, j]
                k = node_of[i]
                if k >= le:
                    c = k - le
                    q = fill[c]
                    idx2[f, q] = i
                    xv2[f, q] = xv[f, j]
                    fill[c] = q + 1
        idx, idx2 = idx2, idx
        xv, xv2 = xv2, xv
        for c in range(n_child + 1):
            seg[c] = new_seg[c]
        ls = le
        le = n_nodes
        depth += 1
    for k in range(n_nodes):
        value[k] = -gsum[k] / (hsum[k] + lam) * lr
    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        cover[:n_nodes].copy(),
    )


def _grow_tree_numpy(X, order, xsorted, g, h, w, max_depth, lam, min_child_weight, lr, colmask, use_colmask, work_i=None, work_x=None):
    n, p = X.shape
    n_in = int(np.count_nonzero(w > 0.0))
    cap = 2 * max(n_in, 1) + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    gsum = np.zeros(cap)
    hsum = np.zeros(cap)
    cover = np.zeros(cap)
    node_of = np.where(w > 0.0, 0, -1).astype(np.int64)
    ls, le, n_nodes, depth = 0, 1, 1, 0
    while ls < le:
        nl = le - ls
        act = node_of >= 0
        slot = node_of[act] - ls
        gsum[ls:le] = np.bincount(slot, weights=g[act], minlength=nl)
        hsum[ls:le] = np.bincount(slot, weights=h[act], minlength=nl)
        cover[ls:le] = np.bincount(slot, weights=w[act], minlength=nl)
        if depth >= max_depth:
            break
        for s in range(nl):
            k = ls + s
            rows = np.flatnonzero(node_of == k)
            G, H = gsum[k], hsum[k]
            parent = G * G / (H + lam)
            best, best_f, best_t = 0.0, -1, 0.0
            for f in range(p):
                if use_colmask and not colmask[k, f]:
                    continue
                srt = rows[np.argsort(X[rows, f], kind="stable")]
                xs = X[srt, f]
                cand = np.flatnonzero(xs[1:] > xs[:-1])
                if cand.size == 0:
                    continue
                GL = np.cumsum(g[srt])[cand]
                HL = np.cumsum(h[srt])[cand]
                HR = H - HL
                GR = G - GL
                gain = GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent
                gain[(HL < min_child_weight) | (HR < min_child_weight)] = -np.inf
                j = int(np.argmax(gain))
                if gain[j] > best:
                    best, best_f = gain[j], f
                    lo, hi = xs[cand[j]], xs[cand[j] + 1]
                    thr = lo + (hi - lo) * 0.5
                    best_t = lo if thr >= hi else thr
            if best_f >= 0 and best > 1e-12 * (1.0 + parent):
                feature[k], threshold[k] = best_f, best_t
                left[k], right[k] = n_nodes, n_nodes + 1
                n_nodes += 2
        idx = np.flatnonzero(node_of >= 0)
        k = node_of[idx]
        f = feature[k]
        split = f >= 0
        go_left = np.zeros(idx.size, dtype=bool)
        go_left[split] = X[idx[split], f[split]] <= threshold[k[split]]
        node_of[idx] = np.where(split, np.where(go_left, left[k], right[k]), -1)
        ls, le = le, n_nodes
        depth += 1
    value = -gsum[:n_nodes] / (hsum[:n_nodes] + lam) * lr
    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value,
        cover[:n_nodes].copy(),
    )


grow_tree_numba = _accel.njit(_grow_tree_loop)
grow_tree_numpy = _grow_tree_numpy
grow_tree = _accel.pick(grow_tree_numba, grow_tree_numpy)


# ---------------------------------------------------------------------------
# prediction


def _predict_forest_loop(X, feature, threshold, left, right, value):
    n = X.shape[0]
    n_trees = feature.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for t in range(n_trees):
            k = 0
            while feature[t, k] >= 0:
                if X[i, feature[t, k]] <= threshold[t, k]:
                    k = left[t, k]
                else:
                    k = right[t, k]
            acc += value[t, k]
        out[i] = acc
    return out


def _predict_forest_numpy(X, feature, threshold, left, right, value):
    n = X.shape[0]
    rows = np.arange(n)
    per_tree = np.zeros((feature.shape[0], n))
    for t in range(feature.shape[0]):
        k = np.zeros(n, dtype=np.int64)
        while True:
            f = feature[t, k]
            internal = f >= 0
            if not internal.any():
                break
            x = X[rows, np.where(internal, f, 0)]
            nxt = np.where(x <= threshold[t, k], left[t, k], right[t, k])
            k = np.where(internal, nxt, k)
        per_tree[t] = value[t, k]
    # sum trees in order per sample, matching the loop kernel
    out = np.zeros(n)
    for t in range(feature.shape[0]):
        out += per_tree[t]
    return out


predict_forest_numba = _accel.njit(_predict_forest_loop)
predict_forest_numpy = _predict_forest_numpy
predict_forest = _accel.pick(predict_forest_numba, predict_forest_numpy)


# ---------------------------------------------------------------------------
# path-dependent TreeSHAP


def _extend(pd, pz, po, pw, depth, zero, one, feat):
    pd[depth] = feat
    pz[depth] = zero
    po[depth] = one
    pw[depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[i + 1] += one * pw[i] * (i + 1) / (depth + 1)
        pw[i] = zero * pw[i] * (depth - i) / (depth + 1)


def _unwind(pd, pz, po, pw, depth, idx):
    one = po[idx]
    zero = pz[idx]
    nxt = pw[depth]
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = pw[i]
            pw[i] = nxt * (depth + 1) / ((i + 1) * one)
            nxt = tmp - pw[i] * zero * (depth - i) / (depth + 1)
        else:
            pw[i] = pw[i] * (depth + 1) / (zero * (depth - i))
    for i in range(idx, depth):
        pd[i] = pd[i + 1]
        pz[i] = pz[i + 1]
        po[i] = po[i + 1]


def _unwound_sum(pz, po, pw, depth, idx):
    one = po[idx]
    zero = pz[idx]
    nxt = pw[depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = nxt * (depth + 1) / ((i + 1) * one)
            total += tmp
            nxt = pw[i] - tmp * zero * ((depth - i) / (depth + 1))
        elif zero != 0.0:
            total += (pw[i] / zero) / ((depth - i) / (depth + 1))
    return total


def _tree_shap_loop(X, feature, threshold, left, right, value, cover, max_depth, scale):
    n, p = X.shape
    n_trees = feature.shape[0]
    phi = np.zeros((n, p))
    levels = max_depth + 2
    pd = np.zeros((levels, levels), dtype=np.int64)
    pz = np.zeros((levels, levels))
    po = np.zeros((levels, levels))
    pw = np.zeros((levels, levels))
    # explicit DFS stack: node, path depth, zero fraction, one fraction, feature, parent level
    st_node = np.zeros(2 * levels + 2, dtype=np.int64)
    st_depth = np.zeros(2 * levels + 2, dtype=np.int64)
    st_zero = np.zeros(2 * levels + 2)
    st_one = np.zeros(2 * levels + 2)
    st_feat = np.zeros(2 * levels + 2, dtype=np.int64)
    st_lvl = np.zeros(2 * levels + 2, dtype=np.int64)
    for r in range(n):
        for t in range(n_trees):
            top = 0
            st_node[0] = 0
            st_depth[0] = 0
            st_zero[0] = 1.0
            st_one[0] = 1.0
            st_feat[0] = -1
            st_lvl[0] = -1
            top = 1
            while top > 0:
                top -= 1
                node = st_node[top]
                d = st_depth[top]
                lvl = st_lvl[top] + 1
                if lvl > 0:
                    for i in range(d):
                        pd[lvl, i] = pd[lvl - 1, i]
                        pz[lvl, i] = pz[lvl - 1, i]
                        po[lvl, i] = po[lvl - 1, i]
                        pw[lvl, i] = pw[lvl - 1, i]
                _extend(pd[lvl], pz[lvl], po[lvl], pw[lvl], d, st_zero[top], st_one[top], st_feat[top])
                f = feature[t, node]
                if f < 0:
                    v = value[t, node] * scale
                    for i in range(1, d + 1):
                        wsum = _unwound_sum(pz[lvl], po[lvl], pw[lvl], d, i)
                        phi[r, pd[lvl, i]] += wsum * (po[lvl, i] - pz[lvl, i]) * v
                    continue
                if X[r, f] <= threshold[t, node]:
                    hot = left[t, node]
                    cold = right[t, node]
                else:
                    hot = right[t, node]
                    cold = left[t, node]
                c = cover[t, node]
                iz = 1.0
                io = 1.0
                k = 0
                while k <= d:
                    if pd[lvl, k] == f:
                        break
                    k += 1
                if k <= d:
                    iz = pz[lvl, k]
                    io = po[lvl, k]
                    _unwind(pd[lvl], pz[lvl], po[lvl], pw[lvl], d, k)
                    d -= 1
                # cold first so the hot branch is popped next
                st_node[top] = cold
                st_depth[top] = d + 1
                st_zero[top] = cover[t, cold] / c * iz
                st_one[top] = 0.0
                st_feat[top] = f
                st_lvl[top] = lvl
                top += 1
                st_node[top] = hot
                st_depth[top] = d + 1
                st_zero[top] = cover[t, hot] / c * iz
                st_one[top] = io
                st_feat[top] = f
                st_lvl[top] = lvl
                top += 1
    return phi


if _accel.HAVE_NUMBA:
    _extend_nb = _accel.njit(_extend)
    _unwind_nb = _accel.njit(_unwind)
    _unwound_sum_nb = _accel.njit(_unwound_sum)


def _build_tree_shap_numba():
    if not _accel.HAVE_NUMBA:
        return None
    # rebind helpers to their compiled versions inside the jitted kernel
    src_globals = dict(_tree_shap_loop.__globals__)
    src_globals.update(_extend=_extend_nb, _unwind=_unwind_nb, _unwound_sum=_unwound_sum_nb)
    import types

    fn = types.FunctionType(_tree_shap_loop.__code__, src_globals, "_tree_shap_loop_nb")
    return _accel.numba.njit(cache=True, nogil=True)(fn)


def _tree_shap_numpy(X, feature, threshold, left, right, value, cover, max_depth, scale):
    # Same recursion, vectorized over samples: the path's feature ids and
    # zero fractions are shared, one fractions and weights are per sample.
    n, p = X.shape
    phi = np.zeros((n, p))
    levels = max_depth + 2

    def extend(pd, pz, po, pw, d, zero, one, feat):
        pd[d] = feat
        pz[d] = zero
        po[d] = one
        pw[d] = np.full(n, 1.0 if d == 0 else 0.0)
        for i in range(d - 1, -1, -1):
            pw[i + 1] = pw[i + 1] + one * pw[i] * (i + 1) / (d + 1)
            pw[i] = zero * pw[i] * (d - i) / (d + 1)

    def unwind(pd, pz, po, pw, d, idx):
        one = po[idx]
        zero = pz[idx]
        nz = one != 0.0
        safe_one = np.where(nz, one, 1.0)
        nxt = pw[d].copy()
        for i in range(d - 1, -1, -1):
            tmp = pw[i].copy()
            a = nxt * (d + 1) / ((i + 1) * safe_one)
            b = pw[i] * (d + 1) / (zero * (d - i)) if zero != 0.0 else pw[i]
            pw[i] = np.where(nz, a, b)
            nxt = np.where(nz, tmp - pw[i] * zero * (d - i) / (d + 1), nxt)
        for i in range(idx, d):
            pd[i] = pd[i + 1]
            pz[i] = pz[i + 1]
            po[i] = po[i + 1].copy()

    def unwound_sum(pz, po, pw, d, idx):
        one = po[idx]
        zero = pz[idx]
        nz = one != 0.0
        safe_one = np.where(nz, one, 1.0)
        nxt = pw[d].copy()
        total = np.zeros(n)
        for i in range(d - 1, -1, -1):
            tmp = nxt * (d + 1) / ((i + 1) * safe_one)
            alt = (pw[i] / zero) / ((d - i) / (d + 1)) if zero != 0.0 else np.zeros(n)
            total = total + np.where(nz, tmp, alt)
            nxt = np.where(nz, pw[i] - tmp * zero * ((d - i) / (d + 1)), nxt)
        return total

    for t in range(feature.shape[0]):
        def recurse(node, path, d, zero, one, feat):
            pd, pz, po, pw = path
            pd, pz = list(pd), list(pz)
            po, pw = [x.copy() for x in po], [x.copy() for x in pw]
            pd += [0] * (levels - len(pd))
            pz += [0.0] * (levels - len(pz))
            po += [np.zeros(n) for _ in range(levels - len(po))]
            pw += [np.zeros(n) for _ in range(levels - len(pw))]
            extend(pd, pz, po, pw, d, zero, one, feat)
            f = feature[t, node]
            if f < 0:
                v = value[t, node] * scale
                for i in range(1, d + 1):
                    wsum = unwound_sum(pz, po, pw, d, i)
                    phi[:, pd[i]] += wsum * (po[i] - pz[i]) * v
                return
            goes_left = X[:, f] <= threshold[t, node]
            c = cover[t, node]
            iz, io = 1.0, np.ones(n)
            k = 0
            while k <= d and pd[k] != f:
                k += 1
            if k <= d:
                iz, io = pz[k], po[k].copy()
                unwind(pd, pz, po, pw, d, k)
                d -= 1
            lc, rc = left[t, node], right[t, node]
            state = (pd, pz, po, pw)
            recurse(lc, state, d + 1, cover[t, lc] / c * iz, np.where(goes_left, io, 0.0), f)
            recurse(rc, state, d + 1, cover[t, rc] / c * iz, np.where(goes_left, 0.0, io), f)

        recurse(0, ([], [], [], []), 0, 1.0, np.ones(n), -1)
    return phi


tree_shap_numba = _build_tree_shap_numba()
tree_shap_python = _tree_shap_loop
tree_shap_numpy = _tree_shap_numpy
tree_shap = _accel.pick(tree_shap_numba, tree_shap_numpy)
