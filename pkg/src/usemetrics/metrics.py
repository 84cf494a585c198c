"""Network impact measures over citation or usage adjacency matrices.

Orientation: ``a[i][j] > 0`` is an edge i -> j (i cites, or is followed by,
j). Influence flows along edges, from the citing row into the cited column.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import accel
from .errors import (
    EmptyMatrix,
    MissingEdge,
    NonConvergence,
    UnnormalizedMatrix,
    ZeroMatrix,
)

BINARY = "binary"
WEIGHTED = "weighted"
ORIENTATION = "a[i][j] is an edge i->j; influence flows from row i into column j"


@dataclass(frozen=True)
class AdjacencyMatrix:
    nodes: tuple[str, ...]
    a: np.ndarray
    mode: str = WEIGHTED

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        n = len(self.nodes)
        if a.shape != (n, n):
            raise ValueError(f"matrix shape {a.shape} does not match {n} nodes")
        if np.any(a < 0) or not np.all(np.isfinite(a)):
            raise ValueError("adjacency entries must be finite and non-negative")
        if self.mode == BINARY:
            a = (a > 0).astype(np.float64)
        elif self.mode != WEIGHTED:
            raise ValueError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "a", a)

    @property
    def n(self) -> int:
        return len(self.nodes)

    @classmethod
    def from_edges(cls, n: int, edges, mode: str = BINARY, nodes: Sequence[str] | None = None) -> "AdjacencyMatrix":
        a = np.zeros((n, n))
        for e in edges:
            i, j = e[0], e[1]
            a[i, j] += e[2] if len(e) > 2 else 1.0
        return cls(tuple(nodes) if nodes else tuple(str(i) for i in range(n)), a, mode)

    @classmethod
    def from_pairs(cls, table, mode: str = WEIGHTED) -> "AdjacencyMatrix":
        return cls(table.nodes, table.to_dense(), mode)

    def csr(self):
        rows, cols = np.nonzero(self.a)
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        return np.cumsum(indptr), cols.astype(np.int64), self.a[rows, cols]

    def binarized(self) -> "AdjacencyMatrix":
        return AdjacencyMatrix(self.nodes, self.a, BINARY)


def degree_centrality(A: AdjacencyMatrix, direction: str = "in") -> np.ndarray:
    """Share of all edge weight entering (``in``) or leaving (``out``) each node."""
    total = A.a.sum()
    if total <= 0:
        raise EmptyMatrix("matrix has no edges")
    if direction == "in":
        return A.a.sum(axis=0) / total
    if direction == "out":
        return A.a.sum(axis=1) / total
    raise ValueError("direction must be 'in' or 'out'")


def pagerank(A: AdjacencyMatrix, lam: float = 0.85, tol: float = 1e-12, max_iter: int = 10_000) -> np.ndarray:
    """Damped random-walk centrality by power iteration.

    Each node passes ``lam`` of its score to its out-neighbours in proportion
    to edge weight (equal shares when binary); dangling nodes spread theirs
    uniformly; every node receives ``(1 - lam) / N`` teleportation mass.
    Iterates until the L1 change drops below ``tol``.
    """
    if not 0 < lam < 1:
        raise ValueError("damping must lie in (0, 1)")
    n = A.n
    if n < 1:
        raise EmptyMatrix("graph has no nodes")
    indptr, indices, w = A.csr()
    rowsum = np.repeat(A.a.sum(axis=1), np.diff(indptr))
    x, it, delta = accel.pagerank(indptr, indices, w / rowsum if len(w) else w, np.int64(n),
                                  float(lam), float(tol), np.int64(max_iter))
    if not delta < tol:
        raise NonConvergence(f"pagerank did not converge in {it} iterations", it, float(delta))
    return x / x.sum()


def influence_matrix(A: AdjacencyMatrix) -> np.ndarray:
    """Row-stochastic influence shares ``a[j][i] / sum(row j)``.

    For a binary matrix the row sum is the out-link count. Rows of nodes
    without out-links spread uniformly.
    """
    out = A.a.sum(axis=1)
    m = np.zeros_like(A.a)
    live = out > 0
    m[live] = A.a[live] / out[live, None]
    m[~live] = 1.0 / A.n
    return m


def eigenvector_centrality(A: AdjacencyMatrix, tol: float = 1e-12, max_iter: int = 10_000) -> np.ndarray:
    """Influence weights by undamped power iteration, L1-normalised each step.

    Node j passes ``p_j a[j][i] / sum(row j)`` to each i it links to; nodes
    without out-links spread their influence uniformly. Oscillation on
    periodic structures raises :class:`NonConvergence`.
    """
    if A.n < 1 or not np.any(A.a > 0):
        raise ZeroMatrix("matrix has no non-zero entry")
    mt = influence_matrix(A).T
    p = np.full(A.n, 1.0 / A.n)
    delta = math.inf
    for it in range(1, max_iter + 1):
        q = mt @ p
        s = q.sum()
        if s <= 0:
            raise NonConvergence("power iteration collapsed to zero", it, delta)
        q /= s
        delta = float(np.abs(q - p).sum())
        p = q
        if delta < tol:
            return p
    raise NonConvergence(f"eigenvector iteration did not converge in {max_iter} iterations", max_iter, delta)


class ShortestPaths:
    """All-pairs geodesic lengths and counts on the binarised graph."""

    def __init__(self, A: AdjacencyMatrix):
        self.nodes = A.nodes
        indptr, indices, _ = A.csr()
        dist, sigma, bc = accel.all_pairs_bfs(indptr, indices, np.int64(A.n))
        self.dist = dist
        self.sigma = sigma
        self._bc = bc

    def length(self, i: int, j: int) -> int | None:
        d = int(self.dist[i, j])
        return None if d < 0 else d

    def count(self, i: int, j: int) -> int:
        return int(self.sigma[i, j])

    def through(self, i: int, j: int, v: int) -> float:
        """Number of i->j geodesics passing through intermediate node v."""
        if v in (i, j) or self.dist[i, j] < 0 or self.dist[i, v] < 0 or self.dist[v, j] < 0:
            return 0.0
        if self.dist[i, v] + self.dist[v, j] != self.dist[i, j]:
            return 0.0
        return float(self.sigma[i, v] * self.sigma[v, j])

    def through_all(self) -> np.ndarray:
        """Dense ``[i, j, v]`` pass-through counts (small graphs only)."""
        d = self.dist.astype(np.float64)
        d[self.dist < 0] = np.inf
        n = len(self.nodes)
        out = np.zeros((n, n, n))
        for v in range(n):
            hit = (d[:, v][:, None] + d[v, :][None, :] == d) & np.isfinite(d)
            out[:, :, v] = np.where(hit, self.sigma[:, v][:, None] * self.sigma[v, :][None, :], 0.0)
            out[v, :, v] = 0.0
            out[:, v, v] = 0.0
        return out


def shortest_paths(A: AdjacencyMatrix) -> ShortestPaths:
    return ShortestPaths(A)


def geodesic_weight(weights: np.ndarray, path: Sequence[int], structure: np.ndarray | None = None,
                    axis: str = "row", atol: float = 1e-9) -> float:
    """Product of normalised edge weights along ``path``.

    ``weights`` must be stochastic along ``axis`` (each non-empty row, or
    column, sums to 1). ``structure`` marks which edges exist; by default an
    edge exists where its weight is positive.
    """
    w = np.asarray(weights, dtype=np.float64)
    sums = w.sum(axis=1 if axis == "row" else 0)
    nonempty = sums > 0
    if np.any(w < 0) or not np.allclose(sums[nonempty], 1.0, atol=atol, rtol=0):
        raise UnnormalizedMatrix(f"matrix is not {axis}-stochastic")
    edges = (w > 0) if structure is None else np.asarray(structure, dtype=bool)
    out = 1.0
    for a, b in zip(path[:-1], path[1:]):
        if not edges[a, b]:
            raise MissingEdge(f"no edge {a}->{b}")
        out *= w[a, b]
    return out


class Closeness(NamedTuple):
    values: np.ndarray  # NaN where a node reaches nothing
    reachable: np.ndarray


def closeness(A: AdjacencyMatrix, paths: ShortestPaths | None = None) -> Closeness:
    """Mean geodesic length from each node to the nodes it can reach.

    Smaller means closer to the rest of the network.
    """
    sp = paths or shortest_paths(A)
    d = sp.dist.astype(np.float64)
    np.fill_diagonal(d, -1)
    ok = d > 0
    cnt = ok.sum(axis=1)
    tot = np.where(ok, d, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan)
    return Closeness(vals, cnt)


def betweenness(A: AdjacencyMatrix, normalization: str | None = None, paths: ShortestPaths | None = None) -> np.ndarray:
    """Fractional share of ordered-pair geodesics each node sits on.

    ``normalization="pair_count"`` divides by (n-1)(n-2).
    """
    sp = paths or shortest_paths(A)
    bc = sp._bc.copy()
    if normalization in (None, "none", "None"):
        return bc
    if normalization in ("pair_count", "PairCount"):
        n = A.n
        return bc / ((n - 1) * (n - 2)) if n > 2 else np.zeros(n)
    raise ValueError(f"unknown normalization {normalization!r}")


def connected_pairs(A: AdjacencyMatrix) -> int:
    """Ordered pairs (i != j) with a directed path from i to j."""
    d = shortest_paths(A).dist
    return int((d > 0).sum())


# --------------------------------------------------------------------------
# metric tables


@dataclass
class MetricTable:
    nodes: tuple[str, ...]
    metrics: dict[str, np.ndarray]
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.metrics.items():
            if len(v) != len(self.nodes):
                raise ValueError(f"metric {k} has {len(v)} values for {len(self.nodes)} nodes")

    def names(self) -> list[str]:
        return list(self.metrics)

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k in sorted(self.metadata):
            buf.write(f"# {k}={self.metadata[k]}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", *self.metrics])
        cols = list(self.metrics.values())
        for i, node in enumerate(self.nodes):
            w.writerow([node, *("" if not np.isfinite(c[i]) else repr(float(c[i])) for c in cols)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MetricTable":
        meta = {}
        body = []
        for line in text.splitlines(keepends=True):
            if line.startswith("# "):
                k, _, v = line[2:].rstrip("\n").partition("=")
                meta[k] = v
            else:
                body.append(line)
        rows = list(csv.reader(io.StringIO("".join(body))))
        names = rows[0][1:]
        nodes = tuple(r[0] for r in rows[1:])
        metrics = {
            name: np.array([float(r[j + 1]) if r[j + 1] != "" else np.nan for r in rows[1:]], dtype=np.float64)
            for j, name in enumerate(names)
        }
        return cls(nodes, metrics, meta)

    def top(self, name: str, k: int = 10, descending: bool = True) -> list[tuple[str, float]]:
        v = self.metrics[name]
        finite = [(self.nodes[i], float(v[i])) for i in range(len(v)) if np.isfinite(v[i])]
        return sorted(finite, key=lambda t: (-t[1] if descending else t[1], t[0]))[:k]


ALL_METRICS = ("in_degree", "out_degree", "pagerank", "eigenvector", "closeness", "betweenness")


def compute_metrics(
    A: AdjacencyMatrix,
    lam: float = 0.85,
    tol: float = 1e-12,
    max_iter: int = 10_000,
    selection: Sequence[str] = ALL_METRICS,
) -> MetricTable:
    """Evaluate the selected measures into one table.

    A measure that fails to converge is left out and noted in the metadata.
    """
    if A.a.sum() <= 0:
        raise EmptyMatrix("matrix has no edges")
    meta = {"lambda": repr(lam), "tol": repr(tol), "orientation": ORIENTATION, "mode": A.mode,
            "closeness": "per-source mean geodesic length over reachable targets (blank: reaches none)",
            "betweenness": "fractional credit over ordered pairs, unnormalised"}
    out: dict[str, np.ndarray] = {}
    sp = shortest_paths(A) if {"closeness", "betweenness"} & set(selection) else None
    for name in selection:
        try:
            if name == "in_degree":
                out[name] = degree_centrality(A, "in")
            elif name == "out_degree":
                out[name] = degree_centrality(A, "out")
            elif name == "pagerank":
                out[name] = pagerank(A, lam, tol, max_iter)
            elif name == "eigenvector":
                out[name] = eigenvector_centrality(A, tol, max_iter)
            elif name == "closeness":
                out[name] = closeness(A, sp).values
            elif name == "betweenness":
                out[name] = betweenness(A, None, sp)
            else:
                raise ValueError(f"unknown metric {name!r}")
        except NonConvergence as exc:
            meta[f"skipped.{name}"] = str(exc)
    return MetricTable(A.nodes, out, meta)


def write_metric_table(path: str | Path, table: MetricTable) -> None:
    Path(path).write_text(table.to_csv(), encoding="utf-8", newline="\n")


def read_metric_table(path: str | Path) -> MetricTable:
    return MetricTable.from_csv(Path(path).read_text(encoding="utf-8"))
