"""Seeded synthetic usage logs driven by behavioural usage modes.

Each event picks a mode, then an article whose age follows that mode:

* ``N`` - an article published in the week before the request,
* ``C`` / ``I`` - age drawn from a truncated exponential with the mode's decay,
* ``H`` - uniform over the archive,
* ``S`` - proportional to the article's accumulated (synthetic) citations.

Users request on each day of the window a Poisson number of events, all in
one session that starts between 08:00 and 16:00 UTC with short gaps, so true
sessions are recoverable with any inactivity timeout above ``max_gap``.
"""

from __future__ import annotations

import csv
import io
import math
import uuid
from dataclasses import dataclass, field
from datetime import date
from typing import Mapping, Sequence

import numpy as np

from .aggregate import CitationRecord
from .core import (
    SECONDS_PER_DAY,
    SECONDS_PER_YEAR,
    RequestType,
    Resource,
    UsageEvent,
    date_to_epoch,
    epoch_to_iso,
    iso_to_epoch,
)
from .errors import InvalidSpec
from .obsolescence import Component, ObsolescenceModel

MODES = ("N", "C", "I", "H", "S")
NEW_WINDOW = 7 * SECONDS_PER_DAY


@dataclass(frozen=True)
class JournalSpec:
    journal_id: str
    article_count: int
    first_published: date
    last_published: date


@dataclass(frozen=True)
class UserGroup:
    label: str
    count: int
    mode_weights: Mapping[str, float]
    request_type_mix: Mapping[str, float]
    activity_rate: float  # events per user per day
    journals: tuple[str, ...] | None = None  # None: every journal


@dataclass(frozen=True)
class PopulationSpec:
    user_groups: tuple[UserGroup, ...]
    journal_table: tuple[JournalSpec, ...]
    window: tuple[int, int]
    seed: int = 0
    decays: Mapping[str, float] = field(default_factory=lambda: {"C": 0.4, "I": 0.065})
    citations_per_article: int = 5
    min_gap: int = 15
    max_gap: int = 600

    def validate(self) -> None:
        if self.window[1] <= self.window[0]:
            raise InvalidSpec("window is empty")
        if self.window[1] - self.window[0] < SECONDS_PER_DAY:
            raise InvalidSpec("window must span at least one day")
        if not 0 < self.min_gap <= self.max_gap:
            raise InvalidSpec("need 0 < min_gap <= max_gap")
        if any(not (v > 0) for v in self.decays.values()) or not {"C", "I"} <= set(self.decays):
            raise InvalidSpec("decays for C and I must be positive")
        ids = [j.journal_id for j in self.journal_table]
        if not ids or len(set(ids)) != len(ids):
            raise InvalidSpec("journal ids must be unique and non-empty")
        for j in self.journal_table:
            if j.article_count < 0 or j.first_published > j.last_published:
                raise InvalidSpec(f"journal {j.journal_id} has an invalid article range")
        for g in self.user_groups:
            if g.count < 0 or g.activity_rate < 0:
                raise InvalidSpec(f"group {g.label}: counts and rates must be non-negative")
            w = g.mode_weights
            if set(w) - set(MODES) or any(v < 0 for v in w.values()) or not math.isclose(sum(w.values()), 1.0, abs_tol=1e-9):
                raise InvalidSpec(f"group {g.label}: mode weights must be non-negative over {MODES} and sum to 1")
            mix = g.request_type_mix
            if not mix or any(v < 0 for v in mix.values()) or not math.isclose(sum(mix.values()), 1.0, abs_tol=1e-9):
                raise InvalidSpec(f"group {g.label}: request type mix must be non-negative and sum to 1")
            if g.journals is not None and set(g.journals) - set(ids):
                raise InvalidSpec(f"group {g.label} references unknown journals")
            if g.count and g.activity_rate and g.journals is not None and not g.journals:
                raise InvalidSpec(f"group {g.label} has no journals")

    @property
    def days(self) -> int:
        return int((self.window[1] - self.window[0]) // SECONDS_PER_DAY)

    def expected_events(self) -> dict[str, float]:
        return {g.label: g.count * g.activity_rate * self.days for g in self.user_groups}

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "window": [epoch_to_iso(self.window[0]), epoch_to_iso(self.window[1])],
            "decays": dict(sorted(self.decays.items())),
            "citations_per_article": self.citations_per_article,
            "min_gap": self.min_gap,
            "max_gap": self.max_gap,
            "journal_table": [
                {"journal_id": j.journal_id, "article_count": j.article_count,
                 "first_published": j.first_published.isoformat(), "last_published": j.last_published.isoformat()}
                for j in self.journal_table
            ],
            "user_groups": [
                {"label": g.label, "count": g.count, "mode_weights": dict(g.mode_weights),
                 "request_type_mix": dict(g.request_type_mix), "activity_rate": g.activity_rate,
                 "journals": list(g.journals) if g.journals is not None else None}
                for g in self.user_groups
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PopulationSpec":
        try:
            return cls(
                user_groups=tuple(
                    UserGroup(g["label"], int(g["count"]), dict(g["mode_weights"]), dict(g["request_type_mix"]),
                              float(g["activity_rate"]), tuple(g["journals"]) if g.get("journals") is not None else None)
                    for g in d["user_groups"]
                ),
                journal_table=tuple(
                    JournalSpec(j["journal_id"], int(j["article_count"]), date.fromisoformat(j["first_published"]),
                                date.fromisoformat(j["last_published"]))
                    for j in d["journal_table"]
                ),
                window=(iso_to_epoch(d["window"][0]), iso_to_epoch(d["window"][1])),
                seed=int(d.get("seed", 0)),
                decays={k: float(v) for k, v in d.get("decays", {"C": 0.4, "I": 0.065}).items()},
                citations_per_article=int(d.get("citations_per_article", 5)),
                min_gap=int(d.get("min_gap", 15)),
                max_gap=int(d.get("max_gap", 600)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidSpec(f"bad population spec: {exc}") from None


# mode mix whose event shares reproduce the four-mode fit to astrophysics usage
# (share of mode m ~ amplitude / decay, H over a 100-year archive)
EQ1_MODE_WEIGHTS = {"H": 150.0, "I": 45.0 / 0.065, "C": 110.0 / 0.4, "N": 100.0}
_total = sum(EQ1_MODE_WEIGHTS.values())
EQ1_MODE_WEIGHTS = {k: v / _total for k, v in EQ1_MODE_WEIGHTS.items()}
DEFAULT_MIX = {"AbstractView": 0.55, "FullTextDownload": 0.3, "TocBrowse": 0.1, "CitationFollow": 0.05}


def default_population_spec(target_events: int = 1_000_000, seed: int = 0, n_journals: int = 20,
                            articles_per_journal: int = 500, activity_rate: float = 5.0,
                            mode_weights: Mapping[str, float] | None = None) -> PopulationSpec:
    """Two disjoint reader communities over a 100-year archive, window = 2001."""
    window = (date_to_epoch(date(2001, 1, 1)), date_to_epoch(date(2002, 1, 1)))
    journals = tuple(
        JournalSpec(f"J{i + 1:02d}", articles_per_journal, date(1901, 1, 1), date(2001, 12, 31))
        for i in range(n_journals)
    )
    half = n_journals // 2
    per_group = max(1, round(target_events / (2 * activity_rate * 365)))
    weights = dict(mode_weights or EQ1_MODE_WEIGHTS)
    groups = (
        UserGroup("astro", per_group, weights, DEFAULT_MIX, activity_rate, tuple(j.journal_id for j in journals[:half])),
        UserGroup("bio", per_group, weights, DEFAULT_MIX, activity_rate, tuple(j.journal_id for j in journals[half:])),
    )
    return PopulationSpec(groups, journals, window, seed)


@dataclass
class SyntheticLog:
    events: list[UsageEvent]
    resources: dict[str, Resource]
    citations: list[CitationRecord]
    truth_sessions: list[str]  # aligned with events
    truth_modes: list[str]  # aligned with events
    true_model: ObsolescenceModel
    mode_counts: dict[str, int]

    def truth_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["event_id", "true_session", "mode"])
        for e, s, m in zip(self.events, self.truth_sessions, self.truth_modes):
            w.writerow([e.event_id, s, m])
        return buf.getvalue()


def _make_resources(spec: PopulationSpec, rng: np.random.Generator) -> list[Resource]:
    out = []
    for j in spec.journal_table:
        lo = j.first_published.toordinal()
        hi = j.last_published.toordinal()
        days = np.sort(rng.integers(lo, hi + 1, size=j.article_count))
        authors = rng.integers(1, 6, size=j.article_count)
        for k, (d, a) in enumerate(zip(days.tolist(), authors.tolist())):
            out.append(Resource(f"{j.journal_id}-{k:05d}", j.journal_id, date.fromordinal(d), a))
    return out


def _make_citations(resources: list[Resource], per_article: int, rng: np.random.Generator):
    """Preferential attachment: each article cites earlier ones in proportion to (citations + 1)."""
    order = sorted(range(len(resources)), key=lambda i: (resources[i].publication_date, resources[i].resource_id))
    urn: list[int] = []
    cites = np.zeros(len(resources), dtype=np.int64)
    records = []
    for pos, i in enumerate(order):
        if pos and per_article:
            want = min(per_article, pos)
            picked: set[int] = set()
            draws = rng.integers(0, len(urn), size=8 * want)
            for d in draws.tolist():
                picked.add(urn[d])
                if len(picked) == want:
                    break
            for t in sorted(picked):
                cites[t] += 1
                urn.append(t)
                records.append(CitationRecord(resources[t].resource_id, resources[i].resource_id,
                                              resources[i].publication_date))
        urn.append(i)
    return records, cites


def _truncated_exp(rng, k: float, limit: np.ndarray) -> np.ndarray:
    """Ages in years from Exp(k) truncated to [0, limit]."""
    u = rng.random(len(limit))
    return -np.log1p(-u * (-np.expm1(-k * limit))) / k


def generate_log(spec: PopulationSpec) -> SyntheticLog:
    """Generate a deterministic synthetic log for ``spec``."""
    spec.validate()
    root = np.random.SeedSequence(spec.seed)
    res_seq, cite_seq, *group_seqs = root.spawn(2 + len(spec.user_groups))
    resources = _make_resources(spec, np.random.default_rng(res_seq))
    citations, cite_counts = _make_citations(resources, spec.citations_per_article, np.random.default_rng(cite_seq))
    pub = np.array([date_to_epoch(r.publication_date) for r in resources], dtype=np.int64)
    journal_of = np.array([r.journal_id for r in resources])
    start, end = spec.window
    archive_start = int(pub.min()) if len(pub) else start

    ts_parts, res_parts, user_parts, sess_parts, mode_parts, type_parts, raw_parts = [], [], [], [], [], [], []
    for g, seq in zip(spec.user_groups, group_seqs):
        rng = np.random.default_rng(seq)
        if g.count == 0 or g.activity_rate == 0:
            continue
        sel = np.flatnonzero(np.isin(journal_of, g.journals)) if g.journals is not None else np.arange(len(resources))
        sel = sel[np.lexsort((sel, pub[sel]))]
        g_pub = pub[sel]
        counts = rng.poisson(g.activity_rate, size=(g.count, spec.days))
        user_idx, day_idx = np.nonzero(counts)
        per_sess = counts[user_idx, day_idx]
        n = int(per_sess.sum())
        if n == 0:
            continue
        if len(sel) == 0:
            raise InvalidSpec(f"group {g.label} has no articles to request")
        sess_of = np.repeat(np.arange(len(per_sess)), per_sess)
        first = np.concatenate([[0], np.cumsum(per_sess)[:-1]])
        sess_start = start + day_idx * SECONDS_PER_DAY + 8 * 3600 + rng.integers(0, 8 * 3600, size=len(per_sess))
        gaps = rng.integers(spec.min_gap, spec.max_gap + 1, size=n)
        gaps[first] = 0
        csum = np.cumsum(gaps)
        ts = sess_start[sess_of] + csum - csum[first][sess_of]

        modes_avail = [m for m in MODES if g.mode_weights.get(m, 0) > 0]
        p = np.array([g.mode_weights[m] for m in modes_avail])
        mode = rng.choice(len(modes_avail), size=n, p=p / p.sum())
        mode_lab = np.array(modes_avail)[mode]
        published = np.searchsorted(g_pub, ts, side="right")  # articles available at event time
        pick = np.zeros(n, dtype=np.int64)
        for m in modes_avail:
            idx = np.flatnonzero(mode_lab == m)
            if len(idx) == 0:
                continue
            avail = np.maximum(published[idx], 1)
            if m == "H" or (m == "S" and cite_counts[sel].sum() == 0):
                pick[idx] = (rng.random(len(idx)) * avail).astype(np.int64)
            elif m == "S":
                w = cite_counts[sel].astype(np.float64)
                cw = np.cumsum(w)
                # restrict to articles already published at event time
                cap = cw[avail - 1]
                pick[idx] = np.searchsorted(cw, rng.random(len(idx)) * cap, side="right")
            else:
                if m == "N":
                    age_s = rng.integers(0, NEW_WINDOW, size=len(idx))
                else:
                    limit = (ts[idx] - archive_start) / SECONDS_PER_YEAR
                    age_s = (_truncated_exp(rng, spec.decays[m], limit) * SECONDS_PER_YEAR).astype(np.int64)
                target = ts[idx] - age_s
                pick[idx] = np.searchsorted(g_pub, target, side="right") - 1
            pick[idx] = np.clip(pick[idx], 0, avail - 1)
        labels = list(g.request_type_mix)
        pm = np.array([g.request_type_mix[x] for x in labels])
        rtype = rng.choice(len(labels), size=n, p=pm / pm.sum())

        ts_parts.append(ts)
        res_parts.append(sel[pick])
        user_parts.append(np.array([f"{g.label}-u{u:05d}" for u in range(g.count)], dtype=object)[user_idx][sess_of])
        sess_parts.append(np.array([f"{g.label}-u{u:05d}-d{d:04d}" for u, d in zip(user_idx.tolist(), day_idx.tolist())],
                                   dtype=object)[sess_of])
        mode_parts.append(mode_lab)
        type_parts.append(np.array(labels, dtype=object)[rtype])
        raw_parts.append(rng.bytes(16 * n))

    if not ts_parts:
        return SyntheticLog([], {r.resource_id: r for r in resources}, citations, [], [], _true_model(spec, {}, resources), {})
    ts = np.concatenate(ts_parts)
    res = np.concatenate(res_parts)
    users = np.concatenate(user_parts)
    sess = np.concatenate(sess_parts)
    modes = np.concatenate(mode_parts)
    types = np.concatenate(type_parts)
    raw = b"".join(raw_parts)
    eids = np.array([str(uuid.UUID(bytes=raw[16 * i: 16 * i + 16], version=4)) for i in range(len(ts))])
    order = np.lexsort((eids, ts))
    rtypes = {x: RequestType(x) for x in set(types.tolist())}
    rid = [r.resource_id for r in resources]
    events = [
        UsageEvent(str(eids[i]), "", str(users[i]), rtypes[types[i]], rid[res[i]], int(ts[i]))
        for i in order.tolist()
    ]
    mode_counts = {m: int((modes == m).sum()) for m in MODES if (modes == m).any()}
    return SyntheticLog(
        events,
        {r.resource_id: r for r in resources},
        citations,
        sess[order].tolist(),
        modes[order].tolist(),
        _true_model(spec, mode_counts, resources),
        mode_counts,
    )


def _true_model(spec: PopulationSpec, mode_counts: Mapping[str, int], resources: Sequence[Resource]) -> ObsolescenceModel:
    """Expected all-article mean rate per mode, assuming uniform publication density.

    The N mode is a one-week window rather than an exponential and is left out.
    """
    if not resources:
        return ObsolescenceModel(())
    pub = np.array([date_to_epoch(r.publication_date) for r in resources])
    span = (spec.window[1] - pub.min()) / SECONDS_PER_YEAR
    density = len(resources) / span  # articles per year
    years = (spec.window[1] - spec.window[0]) / SECONDS_PER_YEAR
    comps = [Component("H", float(mode_counts.get("H", 0) / years / (density * span)), 0.0)]
    for m in ("I", "C"):
        k = spec.decays[m]
        per_year = mode_counts.get(m, 0) / years
        comps.append(Component(m, float(per_year * k / (density * -math.expm1(-k * span))), k))
    return ObsolescenceModel(tuple(comps))
