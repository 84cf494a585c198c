"""Clickstream networks: consecutive request pairs within sessions and the
row-stochastic transition matrix they define."""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse

from . import accel
from .core import Resource, UsageEvent
from .errors import EmptyTable, MissingJournalMapping, MissingSession

ARTICLE = "article"
JOURNAL = "journal"


@dataclass(frozen=True)
class PairFrequencyTable:
    """Pair counts keyed by node index into ``nodes`` (sorted keys)."""

    level: str
    nodes: tuple[str, ...]
    src: np.ndarray
    dst: np.ndarray
    count: np.ndarray

    @property
    def counts(self) -> dict[tuple[str, str], int]:
        return {(self.nodes[s], self.nodes[t]): int(c) for s, t, c in zip(self.src, self.dst, self.count)}

    @property
    def out_totals(self) -> dict[str, int]:
        tot = np.bincount(self.src, weights=self.count, minlength=len(self.nodes)).astype(np.int64)
        return {self.nodes[i]: int(tot[i]) for i in np.unique(self.src)}

    def __len__(self) -> int:
        return len(self.count)

    def total(self) -> int:
        return int(self.count.sum())

    def to_dense(self) -> np.ndarray:
        a = np.zeros((len(self.nodes), len(self.nodes)), dtype=np.float64)
        a[self.src, self.dst] = self.count
        return a

    def to_tsv(self) -> str:
        return "".join(f"{self.nodes[s]}\t{self.nodes[t]}\t{int(c)}\n" for s, t, c in zip(self.src, self.dst, self.count))

    @classmethod
    def from_counts(cls, counts: Mapping[tuple[str, str], int], level: str = ARTICLE) -> "PairFrequencyTable":
        nodes = tuple(sorted({k for pair in counts for k in pair}))
        index = {k: i for i, k in enumerate(nodes)}
        items = sorted((index[s], index[t], c) for (s, t), c in counts.items() if c > 0)
        arr = np.array(items, dtype=np.int64).reshape(-1, 3)
        return cls(level, nodes, arr[:, 0], arr[:, 1], arr[:, 2])

    @classmethod
    def from_tsv(cls, text: str, level: str = ARTICLE) -> "PairFrequencyTable":
        counts = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            s, t, c = line.split("\t")
            counts[(s, t)] = int(c)
        return cls.from_counts(counts, level)


def _factorize(values: Sequence[str]) -> tuple[np.ndarray, list[str]]:
    index: dict[str, int] = {}
    codes = np.fromiter((index.setdefault(v, len(index)) for v in values), dtype=np.int64, count=len(values))
    return codes, list(index)


def extract_pairs(
    events: Sequence[UsageEvent],
    level: str = ARTICLE,
    directed: bool = True,
    resources: Mapping[str, Resource] | None = None,
    *,
    dedup_window: int = 10,
    allow_self: bool = False,
    window: tuple[int, int] | None = None,
) -> PairFrequencyTable:
    """Count node pairs from session clickstreams.

    Directed mode counts each consecutive request pair within a session,
    ordered by (timestamp, event_id). Undirected mode counts, per session,
    each unordered pair of distinct co-occurring nodes once, stored in both
    orientations. Repeated requests for the same resource within
    ``dedup_window`` seconds collapse to one (negative disables). Events
    outside ``window`` are dropped, truncating sessions at its bounds.
    """
    if window is not None:
        events = [e for e in events if window[0] <= e.timestamp < window[1]]
    if any(not e.session_id for e in events):
        raise MissingSession("every event needs a session id; run sessionize first")
    res_ids = [e.resource_id for e in events]
    if level == JOURNAL:
        if resources is None:
            raise MissingJournalMapping("journal level needs the resource table")
        try:
            node_keys = [resources[r].journal_id for r in res_ids]
        except KeyError as exc:
            raise MissingJournalMapping(f"no journal for resource {exc.args[0]}") from None
    elif level == ARTICLE:
        node_keys = res_ids
    else:
        raise ValueError(f"unknown level {level!r}")

    n = len(events)
    sess, _ = _factorize([e.session_id for e in events])
    ts = np.fromiter((e.timestamp for e in events), dtype=np.int64, count=n)
    eid_order = np.argsort(np.array([e.event_id for e in events], dtype=object), kind="stable")
    eid_rank = np.empty(n, dtype=np.int64)
    eid_rank[eid_order] = np.arange(n)
    order = np.lexsort((eid_rank, ts, sess))
    res_code, _ = _factorize(res_ids)
    node_code, node_names = _factorize(node_keys)

    if directed:
        src, dst = accel.consecutive_pairs(sess[order], res_code[order], node_code[order], ts[order],
                                           np.int64(dedup_window), allow_self)
    else:
        src, dst = _cooccurrence(sess[order], node_code[order], allow_self)

    m = max(len(node_names), 1)
    pair_code, cnt = np.unique(src * m + dst, return_counts=True)
    s_code, t_code = pair_code // m, pair_code % m
    # re-index onto sorted node keys that appear in some pair
    used = np.unique(np.concatenate([s_code, t_code]))
    keys = sorted(node_names[i] for i in used)
    pos = {k: i for i, k in enumerate(keys)}
    remap = np.full(m, -1, dtype=np.int64)
    for i in used:
        remap[i] = pos[node_names[i]]
    s_new, t_new = remap[s_code], remap[t_code]
    o = np.lexsort((t_new, s_new))
    return PairFrequencyTable(level, tuple(keys), s_new[o], t_new[o], cnt[o].astype(np.int64))


def _cooccurrence(sess: np.ndarray, node: np.ndarray, allow_self: bool):
    src, dst = [], []
    bounds = np.flatnonzero(np.diff(sess)) + 1
    for chunk in np.split(node, bounds):
        uniq = np.unique(chunk)
        for a, b in combinations(uniq.tolist(), 2):
            src += (a, b)
            dst += (b, a)
        if allow_self:
            vals, cnt = np.unique(chunk, return_counts=True)
            for v in vals[cnt > 1].tolist():
                src.append(v)
                dst.append(v)
    return np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64)


def merge_tables(tables: Sequence[PairFrequencyTable]) -> PairFrequencyTable:
    """Sum pair counts from independent partitions (associative, order-free)."""
    if not tables:
        raise EmptyTable("nothing to merge")
    total: dict[tuple[str, str], int] = defaultdict(int)
    for t in tables:
        for k, c in t.counts.items():
            total[k] += c
    return PairFrequencyTable.from_counts(total, tables[0].level)


@dataclass(frozen=True)
class TransitionMatrix:
    nodes: tuple[str, ...]
    p: sparse.csr_matrix
    dangling: frozenset[str]

    def prob(self, a: str, b: str) -> float:
        i, j = self.nodes.index(a), self.nodes.index(b)
        return float(self.p[i, j])

    def dense(self) -> np.ndarray:
        return self.p.toarray()

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.p.sum(axis=1)).ravel()


def transition_matrix(pairs: PairFrequencyTable) -> TransitionMatrix:
    """Row-normalise pair counts into transition probabilities.

    Nodes without outgoing pairs get all-zero rows and are listed as dangling.
    """
    if len(pairs) == 0:
        raise EmptyTable("pair table is empty")
    n = len(pairs.nodes)
    out = np.bincount(pairs.src, weights=pairs.count, minlength=n)
    vals = pairs.count / out[pairs.src]
    p = sparse.csr_matrix((vals, (pairs.src, pairs.dst)), shape=(n, n))
    p.sort_indices()
    dangling = frozenset(pairs.nodes[i] for i in np.flatnonzero(out == 0))
    return TransitionMatrix(pairs.nodes, p, dangling)


def format_matrix(tm: TransitionMatrix, dense_threshold: int = 2000) -> str:
    """Dense CSV for small matrices, ``source,target,p`` triplets otherwise.

    Both forms start with the node list so the reader can restore ordering.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = len(tm.nodes)
    if n <= dense_threshold:
        w.writerow(["node", *tm.nodes])
        d = tm.dense()
        for i, k in enumerate(tm.nodes):
            w.writerow([k, *(repr(float(x)) for x in d[i])])
    else:
        w.writerow(["#nodes", *tm.nodes])
        w.writerow(["source", "target", "p"])
        coo = tm.p.tocoo()
        for i, j, v in sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist())):
            w.writerow([tm.nodes[i], tm.nodes[j], repr(v)])
    return buf.getvalue()


def parse_matrix(text: str) -> TransitionMatrix:
    rows = list(csv.reader(io.StringIO(text)))
    head = rows[0]
    nodes = tuple(head[1:])
    n = len(nodes)
    if head[0] == "node":
        d = np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=np.float64).reshape(n, n)
        p = sparse.csr_matrix(d)
    else:
        index = {k: i for i, k in enumerate(nodes)}
        trip = [(index[r[0]], index[r[1]], float(r[2])) for r in rows[2:]]
        i, j, v = zip(*trip) if trip else ((), (), ())
        p = sparse.csr_matrix((v, (i, j)), shape=(n, n))
    p.sort_indices()
    sums = np.asarray(p.sum(axis=1)).ravel()
    return TransitionMatrix(nodes, p, frozenset(nodes[i] for i in np.flatnonzero(sums == 0)))


def write_pairs(path: str | Path, table: PairFrequencyTable) -> None:
    Path(path).write_text(table.to_tsv(), encoding="utf-8", newline="\n")


def read_pairs(path: str | Path, level: str = ARTICLE) -> PairFrequencyTable:
    return PairFrequencyTable.from_tsv(Path(path).read_text(encoding="utf-8"), level)
