"""Hot inner loops, each with a numba kernel and a pure-numpy twin.

The backend is chosen once at import time: numba is used when it imports and
``USEMETRICS_NUMBA`` is not set to ``0``/``false``/``off``. Both variants are
always importable as ``<name>_nb`` / ``<name>_np`` so tests and the benchmark
can compare them directly; :func:`kernel` looks one up by backend name.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency, kept optional at runtime
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def _env_enabled() -> bool:
    return os.environ.get("USEMETRICS_NUMBA", "1").strip().lower() not in ("0", "false", "off", "no")


USE_NUMBA = HAVE_NUMBA and _env_enabled()
BACKEND = "numba" if USE_NUMBA else "numpy"


def set_threads(n: int | None) -> None:
    if HAVE_NUMBA and n:
        with warnings.catch_warnings():
            # probing threading layers warns about an old TBB even when unused
            warnings.simplefilter("ignore", numba.NumbaWarning)
            numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


# --------------------------------------------------------------------------
# sessionization
#
# group: int64 key-tuple code per event (input order), ts: int64 seconds.
# Returns (session index per event, index of first timestamp regression or -1).
# Sessions are numbered in order of their first event.


@njit(cache=True)
def sessionize_nb(group, ts, timeout, max_len, n_groups):
    n = group.shape[0]
    last = np.zeros(n_groups, dtype=np.int64)
    start = np.zeros(n_groups, dtype=np.int64)
    cur = np.full(n_groups, -1, dtype=np.int64)
    out = np.empty(n, dtype=np.int64)
    counter = 0
    for i in range(n):
        g = group[i]
        t = ts[i]
        if cur[g] >= 0 and t < last[g]:
            return out, i
        if cur[g] < 0 or t - last[g] > timeout or t - start[g] > max_len:
            cur[g] = counter
            counter += 1
            start[g] = t
        last[g] = t
        out[i] = cur[g]
    return out, -1


def sessionize_np(group, ts, timeout, max_len, n_groups):
    n = group.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64), -1
    order = np.argsort(group, kind="stable")
    g = group[order]
    t = ts[order]
    same = np.empty(n, dtype=bool)
    same[0] = False
    same[1:] = g[1:] == g[:-1]
    dt = np.empty(n, dtype=np.int64)
    dt[0] = 0
    dt[1:] = t[1:] - t[:-1]
    regress = same & (dt < 0)
    if regress.any():
        return np.empty(n, dtype=np.int64), int(order[regress].min())
    brk = ~same | (dt > timeout)
    seg_start = np.flatnonzero(brk)
    seg_end = np.append(seg_start[1:], n)
    spans = t[seg_end - 1] - t[seg_start]
    for a, b in zip(seg_start[spans > max_len], seg_end[spans > max_len]):
        s0 = t[a]
        for j in range(a + 1, b):
            if t[j] - s0 > max_len:
                brk[j] = True
                s0 = t[j]
    sess_sorted = np.cumsum(brk) - 1
    first_idx = order[brk]  # original index of each session's first event
    rank = np.empty(len(first_idx), dtype=np.int64)
    rank[np.argsort(first_idx, kind="stable")] = np.arange(len(first_idx))
    out = np.empty(n, dtype=np.int64)
    out[order] = rank[sess_sorted]
    return out, -1


# --------------------------------------------------------------------------
# consecutive pairs
#
# Inputs are sorted by (session, timestamp, event_id). ``dedup_key`` identifies
# the requested item for double-click collapsing, ``node`` the graph node
# (article or journal). dedup_window < 0 disables collapsing.


@njit(cache=True)
def consecutive_pairs_nb(session, dedup_key, node, ts, dedup_window, allow_self):
    n = session.shape[0]
    src = np.empty(max(n - 1, 0), dtype=np.int64)
    dst = np.empty(max(n - 1, 0), dtype=np.int64)
    k = 0
    prev = -1  # index of previous kept event
    for i in range(n):
        if i > 0 and session[i] == session[i - 1]:
            if (
                dedup_window >= 0
                and dedup_key[i] == dedup_key[i - 1]
                and ts[i] - ts[i - 1] <= dedup_window
            ):
                continue
            if prev >= 0 and session[prev] == session[i]:
                if allow_self or node[prev] != node[i]:
                    src[k] = node[prev]
                    dst[k] = node[i]
                    k += 1
        prev = i
    return src[:k], dst[:k]


def consecutive_pairs_np(session, dedup_key, node, ts, dedup_window, allow_self):
    n = session.shape[0]
    if n < 2:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    same_prev = np.zeros(n, dtype=bool)
    same_prev[1:] = session[1:] == session[:-1]
    drop = np.zeros(n, dtype=bool)
    if dedup_window >= 0:
        drop[1:] = same_prev[1:] & (dedup_key[1:] == dedup_key[:-1]) & (ts[1:] - ts[:-1] <= dedup_window)
    keep = ~drop
    s = session[keep]
    v = node[keep]
    link = s[1:] == s[:-1]
    src = v[:-1][link]
    dst = v[1:][link]
    if not allow_self:
        ok = src != dst
        src, dst = src[ok], dst[ok]
    return src.astype(np.int64), dst.astype(np.int64)


# --------------------------------------------------------------------------
# all-pairs BFS with Brandes dependency accumulation (unweighted, directed)
#
# Returns dist (int64, -1 = unreachable), sigma (float64 geodesic counts) and
# unnormalised betweenness over ordered pairs.


@njit(cache=True)
def all_pairs_bfs_nb(indptr, indices, n):
    dist = np.full((n, n), -1, dtype=np.int64)
    sigma = np.zeros((n, n), dtype=np.float64)
    bc = np.zeros(n, dtype=np.float64)
    queue = np.empty(n, dtype=np.int64)
    delta = np.zeros(n, dtype=np.float64)
    for s in range(n):
        d = dist[s]
        sg = sigma[s]
        d[s] = 0
        sg[s] = 1.0
        head = 0
        tail = 0
        queue[tail] = s
        tail += 1
        while head < tail:
            v = queue[head]
            head += 1
            for p in range(indptr[v], indptr[v + 1]):
                w = indices[p]
                if d[w] < 0:
                    d[w] = d[v] + 1
                    queue[tail] = w
                    tail += 1
                if d[w] == d[v] + 1:
                    sg[w] += sg[v]
        for i in range(n):
            delta[i] = 0.0
        # queue holds vertices in non-decreasing distance: walk it backwards
        for q in range(tail - 1, -1, -1):
            v = queue[q]
            for p in range(indptr[v], indptr[v + 1]):
                w = indices[p]
                if d[w] == d[v] + 1:
                    delta[v] += sg[v] / sg[w] * (1.0 + delta[w])
            if v != s:
                bc[v] += delta[v]
    return dist, sigma, bc


def all_pairs_bfs_np(indptr, indices, n):
    adj = np.zeros((n, n), dtype=np.float64)
    rows = np.repeat(np.arange(n), np.diff(indptr))
    adj[rows, indices] = 1.0
    dist = np.full((n, n), -1, dtype=np.int64)
    sigma = np.zeros((n, n), dtype=np.float64)
    idx = np.arange(n)
    dist[idx, idx] = 0
    sigma[idx, idx] = 1.0
    frontier = np.eye(n, dtype=np.float64)
    level = 0
    while frontier.any():
        reach = (sigma * frontier) @ adj
        new = (reach > 0) & (dist < 0)
        level += 1
        dist[new] = level
        sigma[new] = reach[new]
        frontier = new.astype(np.float64)
    delta = np.zeros((n, n), dtype=np.float64)
    for lv in range(level - 1, -1, -1):
        nxt = dist == lv + 1
        term = np.where(nxt, (1.0 + delta) / np.where(nxt, sigma, 1.0), 0.0)
        here = dist == lv
        delta = np.where(here, sigma * (term @ adj.T), delta)
    np.fill_diagonal(delta, 0.0)
    return dist, sigma, delta.sum(axis=0)


# --------------------------------------------------------------------------
# PageRank power iteration over a row-normalised CSR matrix
#
# weight[p] = a[i][j] / rowsum(i) for stored entry p of row i. Returns
# (vector, iterations, last L1 delta).


@njit(cache=True)
def pagerank_nb(indptr, indices, weight, n, lam, tol, max_iter):
    x = np.full(n, 1.0 / n)
    new = np.empty(n)
    dangling = np.empty(n, dtype=np.bool_)
    for i in range(n):
        dangling[i] = indptr[i + 1] == indptr[i]
    delta = np.inf
    it = 0
    while it < max_iter:
        it += 1
        dm = 0.0
        for i in range(n):
            if dangling[i]:
                dm += x[i]
        base = (1.0 - lam) / n + lam * dm / n
        for i in range(n):
            new[i] = base
        for i in range(n):
            xi = lam * x[i]
            for p in range(indptr[i], indptr[i + 1]):
                new[indices[p]] += xi * weight[p]
        delta = 0.0
        for i in range(n):
            delta += abs(new[i] - x[i])
            x[i] = new[i]
        if delta < tol:
            break
    return x, it, delta


def pagerank_np(indptr, indices, weight, n, lam, tol, max_iter):
    m = np.zeros((n, n), dtype=np.float64)
    rows = np.repeat(np.arange(n), np.diff(indptr))
    np.add.at(m, (rows, indices), weight)
    dangling = np.diff(indptr) == 0
    x = np.full(n, 1.0 / n)
    delta = np.inf
    it = 0
    while it < max_iter:
        it += 1
        new = (1.0 - lam) / n + lam * x[dangling].sum() / n + lam * (x @ m)
        delta = float(np.abs(new - x).sum())
        x = new
        if delta < tol:
            break
    return x, it, delta


# --------------------------------------------------------------------------
# k-means assignment step: nearest centroid and total inertia


@njit(cache=True)
def kmeans_assign_nb(x, centroids):
    n, d = x.shape
    k = centroids.shape[0]
    labels = np.empty(n, dtype=np.int64)
    inertia = 0.0
    for i in range(n):
        best = np.inf
        bj = 0
        for j in range(k):
            s = 0.0
            for c in range(d):
                t = x[i, c] - centroids[j, c]
                s += t * t
            if s < best:
                best = s
                bj = j
        labels[i] = bj
        inertia += best
    return labels, inertia


def kmeans_assign_np(x, centroids):
    d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    return labels.astype(np.int64), float(d2[np.arange(len(x)), labels].sum())


_NAMES = ("sessionize", "consecutive_pairs", "all_pairs_bfs", "pagerank", "kmeans_assign")


def kernel(name: str, backend: str | None = None):
    """Return the kernel ``name`` for ``backend`` (default: the active one)."""
    if name not in _NAMES:
        raise KeyError(name)
    backend = backend or BACKEND
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    return globals()[f"{name}_{'nb' if backend == 'numba' else 'np'}"]


sessionize = kernel("sessionize")
consecutive_pairs = kernel("consecutive_pairs")
all_pairs_bfs = kernel("all_pairs_bfs")
pagerank = kernel("pagerank")
kmeans_assign = kernel("kmeans_assign")
