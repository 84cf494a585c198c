"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line; the lines are printed together at the
end of the pytest run (see ``conftest.pytest_terminal_summary``) and also
immediately, so ``pytest -s tests/test_acceptance.py`` shows them inline.
"""

import json
import math
import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest

from usemetrics.aggregate import CountryInfo, country_usage_points, fit_power_law
from usemetrics.cli import main as cli_main
from usemetrics.core import RequestType, UsageEvent, format_events, parse_events
from usemetrics.errors import EmptyMatrix
from usemetrics.graph import extract_pairs, transition_matrix
from usemetrics.ingest import JournalMonthlyUsage, format_counter_jr1, parse_counter_jr1, read_clf
from usemetrics.mapping import measure_pca, spearman
from usemetrics.metrics import (
    BINARY,
    WEIGHTED,
    AdjacencyMatrix,
    betweenness,
    closeness,
    degree_centrality,
    pagerank,
    shortest_paths,
)
from usemetrics.obsolescence import AgeingCurve, default_model, eval_model, fit_obsolescence

from conftest import make_event
from oracles import (
    betweenness_oracle,
    closeness_oracle,
    digraph_classes,
    eq1,
    labelled_digraphs,
    pagerank_oracle,
    spearman_oracle,
)
from test_mapping import table, two_cluster_metrics

RESULTS: list[str] = []


@contextmanager
def criterion(number, title):
    t0 = time.perf_counter()
    try:
        yield
    except BaseException as exc:
        line = f"acceptance {number:2d} FAIL  {title} ({time.perf_counter() - t0:.1f}s): {type(exc).__name__}: {exc}"
        RESULTS.append(line)
        print(line)
        raise
    line = f"acceptance {number:2d} PASS  {title} ({time.perf_counter() - t0:.1f}s)"
    RESULTS.append(line)
    print(line)


# 1 -----------------------------------------------------------------------


def test_01_model_evaluation():
    with criterion(1, "four-mode model values at t=0 and t=1"):
        m = default_model()
        assert eval_model(m, 0.0) == pytest.approx(1756.5, rel=1e-6)
        assert eval_model(m, 0.0) == pytest.approx(eq1(0.0), rel=1e-6)
        assert eval_model(m, 1.0) == pytest.approx(eq1(1.0), rel=1e-6)
        assert round(eval_model(m, 1.0), 2) == 117.40
        eval_model(m, 1.0)
        best = math.inf
        for _ in range(50):
            t0 = time.perf_counter()
            eval_model(m, 1.0)
            best = min(best, time.perf_counter() - t0)
        assert best < 1e-3, f"{best * 1e3:.3f} ms"


# 2 -----------------------------------------------------------------------

AGES = np.arange(0.5, 100.0, 1.0)


def test_02_fit_recovery():
    with criterion(2, "noiseless and 5%-noise refits"):
        t0 = time.perf_counter()
        truth = default_model()
        clean = eval_model(truth, AGES)
        m, _ = fit_obsolescence(AgeingCurve(AGES, clean, np.full(len(AGES), 100)))
        for c in truth.components:
            got = m.component(c.label)
            assert got.amplitude == pytest.approx(c.amplitude, rel=0.01), c.label
            assert got.decay == pytest.approx(c.decay, rel=0.01, abs=1e-12), c.label

        rng = np.random.default_rng(0)
        noisy = clean * (1 + 0.05 * rng.standard_normal(len(AGES)))
        m, _ = fit_obsolescence(AgeingCurve(AGES, noisy, np.full(len(AGES), 100)))
        assert m.component("I").decay == pytest.approx(0.065, rel=0.2)
        assert m.component("C").decay == pytest.approx(0.4, rel=0.2)
        assert m.component("H").amplitude == pytest.approx(1.5, rel=0.15)
        mid = np.linspace(1, 50, 491)
        assert np.all(np.abs(eval_model(m, mid) / eval_model(truth, mid) - 1) < 0.1)
        assert time.perf_counter() - t0 < 10


# 3 -----------------------------------------------------------------------


def test_03_transition_pipeline():
    with criterion(3, "clickstream transition fixture and row sums on 1000 logs"):
        ev = [make_event(i, "s", "u", "AbstractView", d, 60 * i) for i, d in enumerate(["d1", "d2", "d1", "d3"])]
        tm = transition_matrix(extract_pairs(ev))
        assert tm.prob("d1", "d2") == 0.5
        assert tm.prob("d1", "d3") == 0.5
        assert tm.prob("d2", "d1") == 1.0
        assert tm.dangling == {"d3"}

        for seed in range(1000):
            rng = np.random.default_rng(seed)
            n_docs = int(rng.integers(2, 30))
            events, n = [], 0
            for s in range(int(rng.integers(1, 40))):
                for k in range(int(rng.integers(1, 12))):
                    doc = f"d{int(rng.integers(n_docs))}"
                    events.append(make_event(n, f"s{s}", "u", "AbstractView", doc, s * 100_000 + k * int(rng.integers(1, 120))))
                    n += 1
            pairs = extract_pairs(events)
            if len(pairs) == 0:
                continue
            tm = transition_matrix(pairs)
            sums = tm.row_sums()
            live = np.array([x not in tm.dangling for x in tm.nodes])
            assert np.all(np.abs(sums[live] - 1) <= 1e-12), seed
            assert np.all(sums[~live] == 0)


# 4 -----------------------------------------------------------------------


def _check_graph(a):
    n = len(a)
    g = AdjacencyMatrix(tuple(str(i) for i in range(n)), a.astype(float), BINARY)
    sp = shortest_paths(g)
    bc = betweenness(g, None, sp)
    want = betweenness_oracle(a.tolist())
    assert [Fraction(x).limit_denominator(10_000) for x in bc] == want
    assert np.all(np.abs(bc - np.array([float(x) for x in want])) <= 1e-12)
    cl = closeness(g, sp).values
    for x, y in zip(cl, closeness_oracle(a.tolist())):
        assert (math.isnan(x) and math.isnan(y)) or abs(x - y) <= 1e-12
    total = a.sum()
    if total == 0:
        with pytest.raises(EmptyMatrix):
            degree_centrality(g, "in")
    else:
        for i in range(n):
            assert degree_centrality(g, "in")[i] == sum(a[j][i] for j in range(n)) / total
            assert degree_centrality(g, "out")[i] == sum(a[i][j] for j in range(n)) / total
    return pagerank(g)


def _graphs():
    for n in range(1, 5):
        yield from labelled_digraphs(n)
    yield from digraph_classes(5)
    rng = np.random.default_rng(2024)
    for _ in range(100):
        n = int(rng.integers(6, 9))
        a = (rng.random((n, n)) < rng.uniform(0.1, 0.6)).astype(np.int64)
        np.fill_diagonal(a, 0)
        yield a


def test_04_network_metric_oracles():
    with criterion(4, "betweenness/closeness/degree/PageRank against brute force on all graphs up to 5 nodes"):
        t0 = time.perf_counter()
        by_size: dict[int, list] = {}
        count = 0
        for a in _graphs():
            pr = _check_graph(a)
            by_size.setdefault(len(a), []).append((a, pr))
            count += 1
        # 4 labelled sizes (1 + 4 + 64 + 4096), 9608 classes on 5 nodes, 100 random
        assert count == 1 + 4 + 64 + 4096 + 9608 + 100
        for n, items in by_size.items():
            want = pagerank_oracle(np.stack([a for a, _ in items]))
            got = np.stack([p for _, p in items])
            assert np.max(np.abs(got - want).sum(axis=1)) <= 1e-9, n
        assert time.perf_counter() - t0 < 60


# 5 -----------------------------------------------------------------------


def test_05_pagerank_properties():
    with criterion(5, "PageRank mass, teleportation floor and symmetric uniformity"):
        rng = np.random.default_rng(5)
        lam = 0.85
        for _ in range(1000):
            n = int(rng.integers(1, 60))
            a = (rng.random((n, n)) < rng.uniform(0, 0.3)) * rng.integers(1, 10, (n, n))
            pr = pagerank(AdjacencyMatrix(tuple(map(str, range(n))), a.astype(float), WEIGHTED), lam)
            assert abs(pr.sum() - 1) <= 1e-10
            assert np.all(pr >= (1 - lam) / n - 1e-15)
        for n in range(2, 30):
            ring = np.zeros((n, n))
            for i in range(n):
                ring[i, (i + 1) % n] = ring[(i + 1) % n, i] = 1
            directed_ring = np.roll(np.eye(n), 1, axis=1)
            full = 1 - np.eye(n)
            for a in (ring, directed_ring, full):
                pr = pagerank(AdjacencyMatrix(tuple(map(str, range(n))), a, BINARY))
                assert np.max(np.abs(pr - 1 / n)) <= 1e-10


# 6 -----------------------------------------------------------------------


def test_06_spearman():
    with criterion(6, "Spearman fixture and monotone-transform invariance"):
        assert spearman([1, 2, 3, 4], [1, 3, 2, 4]) == 0.8
        rng = np.random.default_rng(6)
        for _ in range(100):
            n = int(rng.integers(3, 200))
            x = rng.permutation(n * 3)[:n].astype(float)
            y = rng.permutation(n * 3)[:n].astype(float)
            base = spearman(x, y)
            assert base == pytest.approx(spearman_oracle(x.tolist(), y.tolist()), abs=1e-12)
            assert spearman(np.exp(x / n), y) == pytest.approx(base, abs=1e-12)
            assert spearman(2 * x + 1, np.log1p(y)) == pytest.approx(base, abs=1e-12)


# 7 -----------------------------------------------------------------------


def test_07_pca():
    with criterion(7, "PCA ratio ordering, rank-1 case and two-cluster separation"):
        p = measure_pca(table(a=[1, 2, 3, 4, 5, 6], b=[2, 4, 8, 16, 32, 64]))
        assert p.explained_variance_ratio[0] == pytest.approx(1.0, abs=1e-9)
        for seed in range(20):
            r = measure_pca(two_cluster_metrics(seed)).explained_variance_ratio
            assert np.all(np.diff(r) <= 1e-12)
        p = measure_pca(two_cluster_metrics(0))
        xy = p.scores[:, :2]
        usage = np.array([lab.startswith("usage") for lab in p.labels])
        cu, cc = xy[usage].mean(axis=0), xy[~usage].mean(axis=0)
        spread = max(np.linalg.norm(xy[usage] - cu, axis=1).max(), np.linalg.norm(xy[~usage] - cc, axis=1).max())
        assert np.linalg.norm(cu - cc) > spread


# 8 -----------------------------------------------------------------------


def test_08_power_law():
    with criterion(8, "usage vs GDP per capita exponent from seeded country data"):
        rng = np.random.default_rng(8)
        countries, user_country, events = {}, {}, []
        n = 0
        for i in range(40):
            code = f"C{i:02d}"
            pop = float(rng.integers(2_000, 20_000))
            gdp_pc = float(np.exp(rng.uniform(0, 1.5)))
            countries[code] = CountryInfo(pop, gdp_pc * pop)
            per_capita = 0.05 * gdp_pc ** 2.0 * (1 + 0.01 * rng.standard_normal())
            user = f"user-{code}"
            user_country[user] = code
            for _ in range(int(round(per_capita * pop))):
                events.append(UsageEvent(str(n), "", user, RequestType("AbstractView"), "r", 0))
                n += 1
        pts = country_usage_points(events, user_country, countries)
        assert len(pts) == 40
        fit = fit_power_law([(x, y) for _, x, y in pts])
        assert 1.9 <= fit.exponent <= 2.1, fit.exponent


# 9 -----------------------------------------------------------------------


def test_09_round_trips():
    with criterion(9, "JR1 and event round trips on 1000 fixtures, 100k-line CLF corpus"):
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            rows = []
            for j in range(int(rng.integers(1, 6))):
                months = tuple(int(v) for v in rng.integers(0, 500, 12))
                rows.append(JournalMonthlyUsage(f"Journal {seed}-{j}", "Pub", "Plat", f"{seed % 10000:04d}-{j:04d}",
                                                "" if j % 2 else "1111-2222", 2006, months, sum(months)))
            text = format_counter_jr1(rows)
            parsed = parse_counter_jr1(text)
            assert parsed.rows == rows
            assert format_counter_jr1(parsed.rows) == text

            evs = [UsageEvent(f"e{seed}-{i}", f"s{int(rng.integers(5))}" if i % 3 else "",
                              None if i % 4 == 0 else f"u{int(rng.integers(9))}",
                              RequestType(str(rng.choice(["AbstractView", "FullTextDownload", "Custom"]))),
                              f"r{int(rng.integers(100))}", int(rng.integers(0, 2_000_000_000)))
                   for i in range(int(rng.integers(0, 30)))]
            text = format_events(evs)
            assert parse_events(text) == evs
            assert format_events(parse_events(text)) == text

        rng = np.random.default_rng(9)
        good = '10.0.{a}.{b} - - [10/Oct/2000:13:{m:02d}:{s:02d} +0000] "GET /abs/X{i} HTTP/1.1" 200 {i} "-" "Mozilla"'
        bad = ['garbage', '10.0.0.1 - - [10/Oct/2000:13:55:36 +0000] "GET /abs/X HTTP/1.1 200 1',
               '10.0.0.1 - - [99/Oct/2000:13:55:36 +0000] "GET / HTTP/1.1" 200 1',
               '10.0.0.1 - - [10/Oct/2000:13:55:36 +0000] "GET / HTTP/1.1" 2000 1']
        lines, bad_at, blank = [], [], 0
        for i in range(100_000):
            u = rng.random()
            if u < 0.01:
                lines.append(bad[int(rng.integers(len(bad)))])
                bad_at.append(i + 1)
            elif u < 0.011:
                lines.append("")  # blank lines are neither records nor errors
                blank += 1
            else:
                lines.append(good.format(a=i % 250, b=i % 199, m=i % 60, s=(i // 60) % 60, i=i))
        res = read_clf(lines)
        assert [n for n, _ in res.malformed] == bad_at
        assert len(res.records) == 100_000 - len(bad_at) - blank


# 10 ----------------------------------------------------------------------


@pytest.mark.slow
def test_10_end_to_end(tmp_path):
    with criterion(10, "simulate(1e6) -> sessionize -> graph -> metrics -> map twice, byte-identical, < 5 min"):
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps({"seed": 2024, "target_events": 1_000_000}))
        runs, times = [], []
        for name in ("a", "b"):
            out = tmp_path / name
            t0 = time.perf_counter()
            for step in ("simulate", "sessionize", "graph", "metrics", "map"):
                assert cli_main([step, "--config", str(cfg), "--out", str(out)]) == 0, step
            times.append(time.perf_counter() - t0)
            runs.append(out)
        n_events = (runs[0] / "events.tsv").read_text().count("\n")
        assert abs(n_events - 1_000_000) < 10_000
        files = sorted(p.name for p in runs[0].iterdir())
        assert files == sorted(p.name for p in runs[1].iterdir())
        for f in files:
            assert (runs[0] / f).read_bytes() == (runs[1] / f).read_bytes(), f
        assert max(times) < 300, f"{times[0]:.0f}s, {times[1]:.0f}s"
