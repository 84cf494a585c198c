"""Relating measures and mapping journals: rank correlation, PCA of measure
correlations, k-means, and the usage-similarity journal map."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from . import accel
from .core import Resource, UsageEvent
from .errors import DegenerateInput, KTooLarge, LengthMismatch
from .graph import JOURNAL, PairFrequencyTable, extract_pairs
from .metrics import MetricTable


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation: Pearson correlation of mid-ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise LengthMismatch(f"lengths differ: {x.shape} vs {y.shape}")
    if x.ndim != 1 or len(x) < 3:
        raise DegenerateInput("need at least three paired values")
    rx = rankdata(x)
    ry = rankdata(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise DegenerateInput("all values tied")
    return float(np.clip((dx @ dy) / np.sqrt(sxx * syy), -1.0, 1.0))


@dataclass(frozen=True)
class CorrelationMatrix:
    labels: tuple[str, ...]
    r: np.ndarray
    method: str = "spearman"
    dropped: tuple[str, ...] = ()  # constant metrics left out

    def to_csv(self) -> str:
        buf = io.StringIO()
        if self.dropped:
            buf.write(f"# dropped={';'.join(self.dropped)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["", *self.labels])
        for lab, row in zip(self.labels, self.r):
            w.writerow([lab, *(repr(float(v)) for v in row)])
        return buf.getvalue()


def correlation_matrix(table: MetricTable, method: str = "spearman", drop_constant: bool = False) -> CorrelationMatrix:
    """Pairwise correlation between metrics over nodes where all are finite.

    A metric that is constant over those nodes has no defined correlation;
    it raises DegenerateInput unless ``drop_constant`` leaves it out.
    """
    labels = tuple(table.names())
    if len(labels) < 2:
        raise DegenerateInput("need at least two metrics")
    data = np.column_stack([table.metrics[k] for k in labels])
    data = data[np.all(np.isfinite(data), axis=1)]
    if len(data) < 3:
        raise DegenerateInput("need at least three nodes with every metric defined")
    dropped: tuple[str, ...] = ()
    if drop_constant:
        const = np.all(data == data[0], axis=0)
        dropped = tuple(labels[i] for i in np.flatnonzero(const))
        labels = tuple(labels[i] for i in np.flatnonzero(~const))
        data = data[:, ~const]
        if len(labels) < 2:
            raise DegenerateInput(f"fewer than two non-constant metrics (constant: {list(dropped)})")
    if method == "spearman":
        data = np.column_stack([rankdata(c) for c in data.T])
    elif method != "pearson":
        raise ValueError(f"unknown method {method!r}")
    dev = data - data.mean(axis=0)
    ss = np.sqrt((dev ** 2).sum(axis=0))
    if np.any(ss == 0):
        bad = [labels[i] for i in np.flatnonzero(ss == 0)]
        raise DegenerateInput(f"metrics with all values tied: {bad}")
    z = dev / ss
    r = z.T @ z
    r = np.clip((r + r.T) / 2, -1.0, 1.0)
    np.fill_diagonal(r, 1.0)
    return CorrelationMatrix(labels, r, method, dropped)


@dataclass(frozen=True)
class PcaResult:
    labels: tuple[str, ...]
    components: np.ndarray  # (k, m): row c is the c-th loading vector
    eigenvalues: np.ndarray
    explained_variance_ratio: np.ndarray
    scores: np.ndarray  # (m, k): coordinates of each label

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        k = self.scores.shape[1]
        w.writerow(["label", *(f"pc{i + 1}" for i in range(k))])
        w.writerow(["explained_variance_ratio", *(repr(float(v)) for v in self.explained_variance_ratio)])
        for lab, row in zip(self.labels, self.scores):
            w.writerow([lab, *(repr(float(v)) for v in row)])
        return buf.getvalue()


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def pca_of_correlation(corr: CorrelationMatrix) -> PcaResult:
    vals, vecs = np.linalg.eigh(corr.r)
    order = np.argsort(vals, kind="stable")[::-1]
    vals, vecs = vals[order], _fix_signs(vecs[:, order])
    clipped = np.clip(vals, 0.0, None)
    ratio = clipped / np.trace(corr.r)
    scores = vecs * np.sqrt(clipped)[None, :]
    return PcaResult(corr.labels, vecs.T, vals, ratio, scores)


def measure_pca(metrics: MetricTable, method: str = "spearman", drop_constant: bool = False) -> PcaResult:
    """PCA of the inter-metric correlation matrix.

    Components come sorted by explained variance; each label's score is its
    loading scaled by the square root of the component's eigenvalue.
    """
    if len(metrics.nodes) < 3:
        raise DegenerateInput("need at least three nodes")
    return pca_of_correlation(correlation_matrix(metrics, method, drop_constant))


# --------------------------------------------------------------------------
# k-means


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int
    history: list[float] = field(default_factory=list)


def _plus_plus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rest[rng.integers(len(rest))])
        chosen.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[chosen].copy()


def _canonical_labels(labels: np.ndarray, centroids: np.ndarray):
    _, first = np.unique(labels, return_index=True)
    used = labels[np.sort(first)]
    remap = np.full(len(centroids), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    spare = np.flatnonzero(remap < 0)
    remap[spare] = np.arange(len(used), len(centroids))
    new_c = np.empty_like(centroids)
    new_c[remap] = centroids
    return remap[labels], new_c


def _lloyd(x, centroids, max_iter):
    history = []
    labels, inertia = accel.kmeans_assign(x, centroids)
    history.append(inertia)
    it = 0
    for it in range(1, max_iter + 1):
        k = len(centroids)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, x)
        cnt = np.bincount(labels, minlength=k)
        live = cnt > 0
        centroids = centroids.copy()
        centroids[live] = sums[live] / cnt[live, None]
        new_labels, inertia = accel.kmeans_assign(x, centroids)
        history.append(inertia)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels, centroids, history, it


def kmeans(vectors, k: int, seed: int = 0, max_iter: int = 300, n_init: int = 10) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding and ``n_init`` restarts.

    The lowest-inertia restart wins (earliest on ties). Cluster labels are
    renumbered by first appearance, so results are reproducible for a seed.
    """
    x = np.ascontiguousarray(np.asarray(vectors, dtype=np.float64))
    if x.ndim != 2:
        raise ValueError("vectors must be a 2-D array")
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > len(x):
        raise KTooLarge(f"k={k} exceeds {len(x)} rows")
    best = None
    for child in np.random.SeedSequence(seed).spawn(max(1, n_init)):
        rng = np.random.default_rng(child)
        labels, cents, hist, it = _lloyd(x, _plus_plus(x, k, rng), max_iter)
        if best is None or hist[-1] < best[2][-1]:
            best = (labels, cents, hist, it)
    labels, cents, hist, it = best
    labels, cents = _canonical_labels(labels, cents)
    return KMeansResult(labels, cents, float(hist[-1]), it, hist)


# --------------------------------------------------------------------------
# journal map

SIMILARITY_NOTE = "pair counts plus transposed counts, rows L2-normalised; coordinates are the first two PCA scores"


@dataclass(frozen=True)
class JournalMap:
    journals: tuple[str, ...]
    xy: np.ndarray
    labels: np.ndarray
    metadata: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k in sorted(self.metadata):
            buf.write(f"# {k}={self.metadata[k]}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["journal_id", "x", "y", "cluster"])
        for j, (x, y), c in zip(self.journals, self.xy, self.labels):
            w.writerow([j, repr(float(x)), repr(float(y)), int(c)])
        return buf.getvalue()


def similarity_matrix(table: PairFrequencyTable, journals: Sequence[str]) -> np.ndarray:
    index = {j: i for i, j in enumerate(journals)}
    s = np.zeros((len(journals), len(journals)))
    for (a, b), c in table.counts.items():
        s[index[a], index[b]] += c
    return s + s.T


def pca_scores(features: np.ndarray, n_components: int = 2) -> np.ndarray:
    """Row scores on the leading principal axes, zero-padded to ``n_components``."""
    n = len(features)
    out = np.zeros((n, n_components))
    if n < 2:
        return out
    centered = features - features.mean(axis=0)
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    vt = _fix_signs(vt.T).T
    scores = centered @ vt.T
    m = min(n_components, scores.shape[1])
    out[:, :m] = scores[:, :m]
    out[np.abs(out) < 1e-12] = 0.0
    return out


def journal_map_from_pairs(table: PairFrequencyTable, k: int, seed: int = 0,
                           journals: Sequence[str] | None = None, n_init: int = 10) -> JournalMap:
    """Symmetrised usage similarity -> 2-D PCA scores -> k-means clusters.

    ``k`` is capped at the number of journals.
    """
    names = tuple(sorted(set(journals or ()) | set(table.nodes)))
    if not names:
        raise DegenerateInput("no journals to map")
    sim = similarity_matrix(table, names)
    norms = np.linalg.norm(sim, axis=1)
    feats = np.divide(sim, norms[:, None], out=np.zeros_like(sim), where=norms[:, None] > 0)
    xy = pca_scores(feats, 2)
    km = kmeans(xy, min(k, len(names)), seed=seed, n_init=n_init)
    meta = {"similarity": SIMILARITY_NOTE, "k": str(min(k, len(names))), "seed": str(seed)}
    return JournalMap(names, xy, km.labels, meta)


def journal_map(events: Sequence[UsageEvent], resources: Mapping[str, Resource], k: int,
                seed: int = 0, n_init: int = 10, **pair_options) -> JournalMap:
    table = extract_pairs(events, JOURNAL, True, resources, **pair_options)
    journals = {resources[e.resource_id].journal_id for e in events if e.resource_id in resources}
    return journal_map_from_pairs(table, k, seed, sorted(journals), n_init)


def write_map(path: str | Path, m: JournalMap) -> None:
    Path(path).write_text(m.to_csv(), encoding="utf-8", newline="\n")
