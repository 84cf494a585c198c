"""The aggregation function over usage events and the statistics built on it."""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .core import (
    FULL_TEXT,
    SECONDS_PER_YEAR,
    AggregationParams,
    Normalization,
    Referent,
    Resource,
    ResourceFilter,
    UsageEvent,
    UsageStatistic,
    year_start,
)
from .errors import (
    DegenerateInput,
    EmptyDateRange,
    MissingJournalMetadata,
    NonPositiveInput,
    UnknownAuthor,
    UnknownReferent,
)
from .ingest import JournalMonthlyUsage, MinMonthlyRequests, filter_events, format_counter_jr1


@dataclass(frozen=True, slots=True)
class CitationRecord:
    cited_resource_id: str
    citing_resource_id: str
    citation_date: date

    def __post_init__(self):
        if self.cited_resource_id == self.citing_resource_id:
            raise ValueError("an article cannot cite itself")


def format_citations(records: Iterable[CitationRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cited_resource_id", "citing_resource_id", "citation_date"])
    for r in records:
        w.writerow([r.cited_resource_id, r.citing_resource_id, r.citation_date.isoformat()])
    return buf.getvalue()


def parse_citations(text: str) -> list[CitationRecord]:
    return [
        CitationRecord(r["cited_resource_id"], r["citing_resource_id"], date.fromisoformat(r["citation_date"]))
        for r in csv.DictReader(io.StringIO(text))
    ]


def _now() -> int:
    return int(datetime.now(tz=timezone.utc).timestamp())


def _referent_articles(
    referent: Referent,
    resources: Mapping[str, Resource],
    author_articles: Mapping[str, Sequence[str]] | None,
) -> list[str] | None:
    """Article ids the referent owns; ``None`` for country (event-side) referents."""
    if referent.kind == "resource":
        if referent.key not in resources:
            raise UnknownReferent(f"unknown resource {referent.key}")
        return [referent.key]
    if referent.kind == "journal":
        ids = [r.resource_id for r in resources.values() if r.journal_id == referent.key]
        if not ids:
            raise UnknownReferent(f"unknown journal {referent.key}")
        return ids
    if referent.kind == "author":
        if not author_articles or referent.key not in author_articles:
            raise UnknownReferent(f"unknown author {referent.key}")
        return list(author_articles[referent.key])
    return None


def aggregate(
    events: Sequence[UsageEvent],
    referent: Referent,
    params: AggregationParams,
    resources: Mapping[str, Resource],
    *,
    author_articles: Mapping[str, Sequence[str]] | None = None,
    user_country: Mapping[str, str] | None = None,
    produced_at: int | None = None,
) -> UsageStatistic:
    """Count (weighted) events attributed to ``referent`` under ``params``.

    Country referents are attributed by the requesting user's country
    (``user_country`` maps user ids to country codes). The normalisation
    denominator is the number of referent articles passing the resource
    filter (PerArticle) or their summed author counts (PerAuthor).
    """
    if params.date_range is not None and params.date_range[0] >= params.date_range[1]:
        raise EmptyDateRange("aggregation date range is empty")
    owned = _referent_articles(referent, resources, author_articles)
    if owned is None:
        user_country = user_country or {}
        if referent.key not in set(user_country.values()):
            raise UnknownReferent(f"unknown country {referent.key}")
        owned = list(resources)
    rf = params.resource_filter
    articles = {a for a in owned if a in resources and rf.accepts(resources[a])}

    pool = events
    uf = params.user_filter
    if uf.min_monthly_requests is not None:
        pool = filter_events(pool, MinMonthlyRequests(uf.min_monthly_requests))
    lo, hi = params.date_range if params.date_range is not None else (-math.inf, math.inf)
    types = params.request_types
    total = 0.0
    for e in pool:
        if e.resource_id not in articles or not lo <= e.timestamp < hi:
            continue
        if uf.full_text_only and e.request_type != FULL_TEXT:
            continue
        if types is not None and e.request_type not in types:
            continue
        if referent.kind == "country" and user_country.get(e.user_id or "") != referent.key:
            continue
        total += params.weight(e.request_type)

    note = None
    if params.normalization is Normalization.NONE:
        value = total
    else:
        if params.normalization is Normalization.PER_ARTICLE:
            denom = len(articles)
        else:
            denom = sum(resources[a].author_count for a in articles)
        if denom == 0:
            value, note = None, "NoArticles"
        else:
            value = total / denom
    return UsageStatistic(referent, value, params, _now() if produced_at is None else produced_at, note)


def usage_impact_factor(
    events: Sequence[UsageEvent],
    journal: str,
    census_year: int,
    resources: Mapping[str, Resource],
    *,
    produced_at: int | None = None,
) -> UsageStatistic:
    """Mean census-year use of a journal's articles from the two preceding years.

    Undefined (``value is None``, note ``NoArticlesInWindow``) when the
    journal published nothing in that window.
    """
    window = {census_year - 1, census_year - 2}
    articles = {r.resource_id for r in resources.values()
                if r.journal_id == journal and r.publication_date.year in window}
    lo, hi = year_start(census_year), year_start(census_year + 1)
    params = uif_params(journal, census_year)
    stamp = _now() if produced_at is None else produced_at
    if not articles:
        return UsageStatistic(Referent("journal", journal), None, params, stamp, "NoArticlesInWindow")
    hits = sum(1 for e in events if e.resource_id in articles and lo <= e.timestamp < hi)
    return UsageStatistic(Referent("journal", journal), hits / len(articles), params, stamp)


def _uif_filter(journal: str, census_year: int) -> ResourceFilter:
    return ResourceFilter(frozenset([journal]), date(census_year - 2, 1, 1), date(census_year - 1, 12, 31))


def uif_params(journal: str, census_year: int) -> AggregationParams:
    """The aggregation parameters equivalent to :func:`usage_impact_factor`."""
    return AggregationParams(
        date_range=(year_start(census_year), year_start(census_year + 1)),
        resource_filter=_uif_filter(journal, census_year),
        normalization=Normalization.PER_ARTICLE,
    )


# --------------------------------------------------------------------------
# COUNTER JR1


@dataclass(frozen=True)
class JournalMeta:
    title: str
    publisher: str = ""
    platform: str = ""
    print_issn: str = ""
    online_issn: str = ""


def parse_journal_meta(text: str) -> dict[str, JournalMeta]:
    """Read ``journal_id,title,publisher,platform,print_issn,online_issn`` CSV."""
    return {
        r["journal_id"]: JournalMeta(r["title"], r.get("publisher", ""), r.get("platform", ""),
                                     r.get("print_issn", ""), r.get("online_issn", ""))
        for r in csv.DictReader(io.StringIO(text))
    }


def format_journal_meta(meta: Mapping[str, JournalMeta]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["journal_id", "title", "publisher", "platform", "print_issn", "online_issn"])
    for jid in sorted(meta):
        m = meta[jid]
        w.writerow([jid, m.title, m.publisher, m.platform, m.print_issn, m.online_issn])
    return buf.getvalue()


def jr1_rows(
    events: Sequence[UsageEvent],
    year: int,
    journals: Mapping[str, JournalMeta],
    resources: Mapping[str, Resource],
) -> list[JournalMonthlyUsage]:
    counts: dict[str, list[int]] = defaultdict(lambda: [0] * 12)
    lo, hi = year_start(year), year_start(year + 1)
    for e in events:
        if not lo <= e.timestamp < hi:
            continue
        r = resources.get(e.resource_id)
        if r is None:
            continue
        if r.journal_id not in journals:
            raise MissingJournalMetadata(f"no metadata for journal {r.journal_id}")
        row = counts[r.journal_id]
        if e.request_type == FULL_TEXT:
            row[datetime.fromtimestamp(e.timestamp, tz=timezone.utc).month - 1] += 1
    rows = []
    for jid in sorted(journals, key=lambda j: (journals[j].title, j)):
        m = journals[jid]
        months = tuple(counts[jid]) if jid in counts else (0,) * 12
        rows.append(JournalMonthlyUsage(m.title, m.publisher, m.platform, m.print_issn, m.online_issn,
                                        year, months, sum(months)))
    return rows


def write_counter_jr1(
    events: Sequence[UsageEvent],
    year: int,
    journals: Mapping[str, JournalMeta],
    resources: Mapping[str, Resource],
) -> str:
    """JR1 report: monthly successful full-text downloads per journal."""
    return format_counter_jr1(jr1_rows(events, year, journals, resources), year)


# --------------------------------------------------------------------------
# read-cite points


@dataclass(frozen=True)
class ReadCitePoint:
    author_id: str
    usage_rate: float
    total_citations: float
    read10: float


def read_cite_point(
    events: Sequence[UsageEvent],
    citations: Sequence[CitationRecord],
    author: str,
    as_of: date,
    author_articles: Mapping[str, Sequence[str]],
    resources: Mapping[str, Resource],
    window: tuple[int, int],
) -> ReadCitePoint:
    """Author-normalised usage rate and citation total for one author.

    Each article's reads and citations are divided by its author count.
    ``usage_rate`` is reads per year over ``window``; ``read10`` keeps only
    articles published within ten years of ``as_of``; citations are counted
    up to ``as_of``.
    """
    if author not in author_articles:
        raise UnknownAuthor(f"unknown author {author}")
    lo, hi = window
    if hi <= lo:
        raise EmptyDateRange("measurement window is empty")
    years = (hi - lo) / SECONDS_PER_YEAR
    arts = set(author_articles[author])
    reads: dict[str, int] = defaultdict(int)
    for e in events:
        if e.resource_id in arts and lo <= e.timestamp < hi:
            reads[e.resource_id] += 1
    cites: dict[str, int] = defaultdict(int)
    for c in citations:
        if c.cited_resource_id in arts and c.citation_date <= as_of:
            cites[c.cited_resource_id] += 1
    try:
        cutoff = as_of.replace(year=as_of.year - 10)
    except ValueError:  # 29 February
        cutoff = as_of.replace(year=as_of.year - 10, day=28)
    usage = read10 = total_c = 0.0
    for a in arts:
        n = resources[a].author_count
        usage += reads[a] / n
        total_c += cites[a] / n
        if resources[a].publication_date >= cutoff:
            read10 += reads[a] / n
    return ReadCitePoint(author, usage / years, total_c, read10 / years)


# --------------------------------------------------------------------------
# power law


class PowerLawFit(NamedTuple):
    exponent: float
    amplitude: float
    r2: float


def fit_power_law(points: Sequence[tuple[float, float]]) -> PowerLawFit:
    """Least-squares line in log-log space: ``y = amplitude * x ** exponent``."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise DegenerateInput("need at least three (x, y) points")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise NonPositiveInput("power-law fit needs strictly positive finite points")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    dx = lx - lx.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateInput("all x values are equal")
    slope = float(dx @ (ly - ly.mean())) / sxx
    icept = float(ly.mean() - slope * lx.mean())
    resid = ly - (icept + slope * lx)
    ss_res = float(resid @ resid)
    dy = ly - ly.mean()
    ss_tot = float(dy @ dy)
    r2 = 1.0 if ss_res == 0.0 or ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return PowerLawFit(slope, math.exp(icept), r2)


@dataclass(frozen=True)
class CountryInfo:
    population: float
    gdp: float  # total GDP in any fixed currency unit


def parse_country_table(text: str) -> dict[str, CountryInfo]:
    """Read ``country,population,gdp`` CSV."""
    return {r["country"]: CountryInfo(float(r["population"]), float(r["gdp"]))
            for r in csv.DictReader(io.StringIO(text))}


def country_usage_points(
    events: Sequence[UsageEvent],
    user_country: Mapping[str, str],
    countries: Mapping[str, CountryInfo],
) -> list[tuple[str, float, float]]:
    """Per-capita GDP against per-capita usage events, by requesting country.

    Countries without events are omitted (a zero cannot sit on a log axis).
    """
    counts: dict[str, int] = defaultdict(int)
    for e in events:
        c = user_country.get(e.user_id or "")
        if c in countries:
            counts[c] += 1
    return [
        (c, countries[c].gdp / countries[c].population, counts[c] / countries[c].population)
        for c in sorted(counts)
    ]


def format_statistics(stats: Iterable[UsageStatistic]) -> str:
    return "".join(s.to_line() + "\n" for s in stats)


def write_power_law_csv(path: str | Path, points: Sequence[tuple[str, float, float]], fit: PowerLawFit) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["country", "gdp_per_capita", "usage_per_capita", "fitted"])
    for c, x, y in points:
        w.writerow([c, repr(x), repr(y), repr(fit.amplitude * x ** fit.exponent)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")
