import math
import uuid
from datetime import date

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from usemetrics.aggregate import (
    CitationRecord,
    JournalMeta,
    aggregate,
    country_usage_points,
    CountryInfo,
    fit_power_law,
    format_citations,
    parse_citations,
    read_cite_point,
    uif_params,
    usage_impact_factor,
    write_counter_jr1,
)
from usemetrics.core import (
    AggregationParams,
    Normalization,
    Referent,
    RequestType,
    Resource,
    ResourceFilter,
    UsageEvent,
    UserFilter,
    date_to_epoch,
    year_start,
)
from usemetrics.errors import (
    DegenerateInput,
    EmptyDateRange,
    MissingJournalMetadata,
    NonPositiveInput,
    UnknownAuthor,
    UnknownReferent,
)
from usemetrics.ingest import format_counter_jr1, parse_counter_jr1

_n = iter(range(10**9))


def ev(resource, ts, rtype="AbstractView", user="u"):
    return UsageEvent(str(uuid.UUID(int=next(_n) + 1)), "", user, RequestType(rtype), resource, ts)


RES = {
    "a1": Resource("a1", "J1", date(2004, 3, 1), 1),
    "a2": Resource("a2", "J1", date(2005, 6, 1), 2),
    "b1": Resource("b1", "J2", date(1990, 1, 1), 3),
}
T2006 = year_start(2006)


def test_seven_events_on_one_article():
    evs = [ev("a1", T2006 + i) for i in range(7)]
    assert aggregate(evs, Referent("resource", "a1"), AggregationParams(), RES).value == 7


def test_per_article_journal():
    evs = [ev("a1", T2006 + i) for i in range(12)] + [ev("a2", T2006 + i) for i in range(18)]
    p = AggregationParams(normalization=Normalization.PER_ARTICLE)
    assert aggregate(evs, Referent("journal", "J1"), p, RES).value == 15


def test_per_author():
    evs = [ev("a1", T2006)] * 3 + [ev("a2", T2006)] * 3
    p = AggregationParams(normalization=Normalization.PER_AUTHOR)
    assert aggregate(evs, Referent("journal", "J1"), p, RES).value == 2.0


def test_date_range_excluding_everything():
    evs = [ev("a1", T2006 + i) for i in range(7)]
    p = AggregationParams(date_range=(0, 10))
    assert aggregate(evs, Referent("resource", "a1"), p, RES).value == 0


def test_empty_date_range_and_unknown_referent():
    with pytest.raises(EmptyDateRange):
        aggregate([], Referent("resource", "a1"), AggregationParams(date_range=(5, 5)), RES)
    with pytest.raises(UnknownReferent):
        aggregate([], Referent("journal", "nope"), AggregationParams(), RES)
    with pytest.raises(UnknownReferent):
        aggregate([], Referent("author", "nobody"), AggregationParams(), RES)


def test_weights_and_type_filter():
    evs = [ev("a1", 0, "FullTextDownload"), ev("a1", 0, "AbstractView"), ev("a1", 0, "Bookmark")]
    p = AggregationParams(weights={"FullTextDownload": 2.0, "AbstractView": 0.5})
    assert aggregate(evs, Referent("resource", "a1"), p, RES).value == 3.5
    p = AggregationParams(request_types=frozenset([RequestType("Bookmark")]))
    assert aggregate(evs, Referent("resource", "a1"), p, RES).value == 1


def test_country_attribution_uses_requester():
    evs = [ev("a1", 0, user="x"), ev("b1", 0, user="x"), ev("a1", 0, user="y")]
    st_ = aggregate(evs, Referent("country", "FR"), AggregationParams(), RES, user_country={"x": "FR", "y": "DE"})
    assert st_.value == 2


def test_author_referent():
    evs = [ev("a1", 0), ev("b1", 0), ev("b1", 0)]
    st_ = aggregate(evs, Referent("author", "kurtz"), AggregationParams(), RES, author_articles={"kurtz": ["a1", "b1"]})
    assert st_.value == 3


def test_statistic_line():
    s = aggregate([ev("a1", 0)], Referent("resource", "a1"), AggregationParams(), RES, produced_at=0)
    ref, val, digest = s.to_line().split("\t")
    assert (ref, float(val), digest) == ("resource:a1", 1.0, AggregationParams().digest())


# log generator for properties
log_events = st.lists(
    st.tuples(st.sampled_from(sorted(RES)), st.integers(T2006 - 10**7, T2006 + 10**7),
              st.sampled_from(["AbstractView", "FullTextDownload", "TocBrowse"]), st.sampled_from("uvw")),
    max_size=60,
).map(lambda rows: [ev(*r) for r in rows])


@given(log_events, st.integers(-10**7, 10**7), st.integers(1, 10**7), st.integers(0, 10**7))
def test_monotone_in_date_range(evs, lo, width, extra):
    inner = AggregationParams(date_range=(T2006 + lo, T2006 + lo + width))
    outer = AggregationParams(date_range=(T2006 + lo - extra, T2006 + lo + width + extra))
    for ref in (Referent("journal", "J1"), Referent("resource", "b1")):
        assert aggregate(evs, ref, outer, RES).value >= aggregate(evs, ref, inner, RES).value


@given(log_events)
def test_relaxing_filters_never_decreases(evs):
    strict = AggregationParams(request_types=frozenset([RequestType("FullTextDownload")]),
                               user_filter=UserFilter(min_monthly_requests=2, full_text_only=True),
                               resource_filter=ResourceFilter(published_from=date(2005, 1, 1)))
    relaxed = AggregationParams()
    ref = Referent("journal", "J1")
    assert aggregate(evs, ref, relaxed, RES).value >= aggregate(evs, ref, strict, RES).value


@given(log_events)
def test_partitions_conserve_counts(evs):
    p = AggregationParams()
    per_journal = sum(aggregate(evs, Referent("journal", j), p, RES).value for j in ("J1", "J2"))
    per_article = sum(aggregate(evs, Referent("resource", r), p, RES).value for r in RES)
    assert per_journal == per_article == len(evs)


class TestUif:
    res = {
        "p1": Resource("p1", "J", date(2004, 5, 1)),
        "p2": Resource("p2", "J", date(2005, 7, 1)),
        "p3": Resource("p3", "J", date(2005, 9, 1)),
        "old": Resource("old", "J", date(2001, 1, 1)),
        "new": Resource("new", "J", date(2006, 1, 1)),
    }

    def test_two_articles_thirty_events(self):
        res = {k: self.res[k] for k in ("p1", "p2", "old")}
        evs = [ev("p1", T2006 + i) for i in range(20)] + [ev("p2", T2006 + i) for i in range(10)]
        evs += [ev("old", T2006)] * 5 + [ev("p1", T2006 - 1)] * 4
        assert usage_impact_factor(evs, "J", 2006, res).value == 15.0

    def test_no_window_articles(self):
        s = usage_impact_factor([], "J", 2006, {"old": self.res["old"]})
        assert s.value is None and s.note == "NoArticlesInWindow"

    def test_hand_enumerated_three_articles(self):
        evs = [ev("p1", T2006 + i) for i in range(10)] + [ev("p3", T2006 + i) for i in range(5)]
        assert usage_impact_factor(evs, "J", 2006, self.res).value == 5.0

    @given(st.lists(st.tuples(st.sampled_from(["p1", "p2", "p3", "old", "new"]),
                              st.integers(T2006 - 10**8, T2006 + 10**8)), max_size=50))
    def test_matches_aggregate(self, rows):
        evs = [ev(r, t) for r, t in rows]
        direct = usage_impact_factor(evs, "J", 2006, self.res).value
        via = aggregate(evs, Referent("journal", "J"), uif_params("J", 2006), self.res).value
        assert math.isclose(direct, via)


class TestJr1Writer:
    meta = {"J1": JournalMeta("Journal One", "Pub", "Plat", "1234-5678", "8765-4321"), "J2": JournalMeta("Zeta")}

    def test_monthly_full_text(self):
        evs = [ev("a1", date_to_epoch(date(2006, m, 15)), "FullTextDownload") for m in range(1, 13)]
        rows = parse_counter_jr1(write_counter_jr1(evs, 2006, self.meta, RES)).rows
        j1 = next(r for r in rows if r.journal == "Journal One")
        assert j1.months == (1,) * 12 and j1.ytd == 12

    def test_abstract_only_is_zero(self):
        evs = [ev("b1", date_to_epoch(date(2006, 3, 1)), "AbstractView")]
        rows = parse_counter_jr1(write_counter_jr1(evs, 2006, self.meta, RES)).rows
        z = next(r for r in rows if r.journal == "Zeta")
        assert z.months == (0,) * 12 and z.ytd == 0

    def test_missing_metadata(self):
        with pytest.raises(MissingJournalMetadata):
            write_counter_jr1([ev("b1", T2006)], 2006, {"J1": self.meta["J1"]}, RES)

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        evs = [ev(str(rng.choice(sorted(RES))), int(T2006 + rng.integers(0, 365 * 86400)), "FullTextDownload")
               for _ in range(200)]
        text = write_counter_jr1(evs, 2006, self.meta, RES)
        parsed = parse_counter_jr1(text)
        assert parsed.warnings == []
        assert format_counter_jr1(parsed.rows) == text
        assert sum(r.ytd for r in parsed.rows) == 200


class TestReadCite:
    window = (year_start(2006), year_start(2007))

    def _setup(self, authors=1):
        res = {"x": Resource("x", "J", date(2000, 1, 1), authors)}
        evs = [ev("x", year_start(2006) + i) for i in range(10)]
        cites = [CitationRecord("x", f"c{i}", date(2003, 1, 1)) for i in range(4)]
        return res, evs, cites

    def test_single_author(self):
        res, evs, cites = self._setup()
        p = read_cite_point(evs, cites, "me", date(2006, 12, 31), {"me": ["x"]}, res, self.window)
        # calendar 2006 is 365 days against a 365.25-day year
        assert p.usage_rate == pytest.approx(10.0 * 365.25 / 365, rel=1e-12)
        assert p.total_citations == 4.0

    def test_two_authors(self):
        res, evs, cites = self._setup(2)
        p = read_cite_point(evs, cites, "me", date(2006, 12, 31), {"me": ["x"]}, res, self.window)
        assert p.usage_rate == pytest.approx(5.0 * 365.25 / 365, rel=1e-12)
        assert p.total_citations == 2.0

    def test_read10(self):
        res = {"young": Resource("young", "J", date(2001, 6, 1)), "old": Resource("old", "J", date(1991, 6, 1))}
        w = (year_start(2006), year_start(2006) + int(365.25 * 86400))
        evs = [ev("young", w[0] + i) for i in range(6)] + [ev("old", w[0] + i) for i in range(8)]
        p = read_cite_point(evs, [], "me", date(2006, 6, 1), {"me": ["young", "old"]}, res, w)
        assert p.read10 == pytest.approx(6.0, rel=1e-12)
        assert p.usage_rate == pytest.approx(14.0, rel=1e-12)

    def test_unknown_author(self):
        with pytest.raises(UnknownAuthor):
            read_cite_point([], [], "who", date(2006, 1, 1), {}, RES, self.window)

    def test_citation_csv_round_trip(self):
        recs = [CitationRecord("a", "b", date(2001, 2, 3)), CitationRecord("c", "b", date(2002, 2, 3))]
        assert parse_citations(format_citations(recs)) == recs
        with pytest.raises(ValueError):
            CitationRecord("a", "a", date(2000, 1, 1))


class TestPowerLaw:
    def test_exact_square(self):
        f = fit_power_law([(x, x * x) for x in (1.0, 2.0, 3.0, 10.0)])
        assert abs(f.exponent - 2.0) < 1e-9 and f.r2 == pytest.approx(1.0)

    def test_constant(self):
        assert fit_power_law([(x, 5.0) for x in (1.0, 2.0, 4.0)]).exponent == pytest.approx(0.0, abs=1e-12)

    def test_noisy(self):
        rng = np.random.default_rng(20)
        x = np.exp(rng.uniform(0, 4, 20))
        y = 3 * x ** 2.0 * (1 + 0.01 * rng.standard_normal(20))
        assert 1.9 <= fit_power_law(list(zip(x, y))).exponent <= 2.1

    def test_errors(self):
        with pytest.raises(NonPositiveInput):
            fit_power_law([(1, 1), (2, 0), (3, 3)])
        with pytest.raises(DegenerateInput):
            fit_power_law([(2, 1), (2, 2), (2, 3)])

    @given(st.lists(st.tuples(st.floats(0.1, 100), st.floats(0.1, 100)), min_size=3, max_size=15,
                    unique_by=lambda p: p[0]),
           st.floats(0.01, 100))
    def test_scale_equivariance(self, pts, a):
        xs = [p[0] for p in pts]
        if max(xs) / min(xs) < 1.01:
            return
        f1 = fit_power_law(pts)
        f2 = fit_power_law([(a * x, y) for x, y in pts])
        assert abs(f1.exponent - f2.exponent) < 1e-9

    def test_country_points(self):
        evs = [ev("a1", 0, user="x")] * 4 + [ev("a1", 0, user="y")]
        pts = country_usage_points(evs, {"x": "FR", "y": "DE"},
                                   {"FR": CountryInfo(2.0, 10.0), "DE": CountryInfo(1.0, 3.0)})
        assert pts == [("DE", 3.0, 1.0), ("FR", 5.0, 2.0)]
