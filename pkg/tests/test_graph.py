import random
from dataclasses import replace
from datetime import date

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from usemetrics.core import Resource
from usemetrics.errors import EmptyTable, MissingJournalMapping, MissingSession
from usemetrics.graph import (
    ARTICLE,
    JOURNAL,
    PairFrequencyTable,
    extract_pairs,
    format_matrix,
    merge_tables,
    parse_matrix,
    read_pairs,
    transition_matrix,
    write_pairs,
)

from conftest import make_event
from oracles import transition_oracle


def session_events(docs, session="s1", start=0, step=60, first_id=0):
    return [make_event(first_id + i, session, "u", "AbstractView", d, start + i * step) for i, d in enumerate(docs)]


def log_from_sessions(sessions, step=60):
    events, n = [], 0
    for k, docs in enumerate(sessions):
        events += session_events(docs, f"s{k}", start=k * 10_000, step=step, first_id=n)
        n += len(docs)
    return events


class TestExtractPairs:
    def test_consecutive_pairs(self):
        t = extract_pairs(session_events(["d1", "d2", "d1", "d3"]))
        assert t.counts == {("d1", "d2"): 1, ("d2", "d1"): 1, ("d1", "d3"): 1}
        assert t.out_totals == {"d1": 2, "d2": 1}

    def test_single_event_sessions(self):
        t = extract_pairs(log_from_sessions([["a"], ["b"], ["c"]]))
        assert len(t) == 0 and t.counts == {}

    def test_journal_self_pair_suppressed(self):
        res = {d: Resource(d, "J", date(2000, 1, 1)) for d in ("d1", "d2")}
        t = extract_pairs(session_events(["d1", "d2"]), JOURNAL, True, res)
        assert len(t) == 0

    def test_journal_self_pair_enabled(self):
        res = {d: Resource(d, "J", date(2000, 1, 1)) for d in ("d1", "d2")}
        t = extract_pairs(session_events(["d1", "d2"]), JOURNAL, True, res, allow_self=True)
        assert t.counts == {("J", "J"): 1}

    def test_journal_level_maps_pairs(self):
        res = {"a1": Resource("a1", "JA", date(2000, 1, 1)), "a2": Resource("a2", "JA", date(2000, 1, 1)),
               "b1": Resource("b1", "JB", date(2000, 1, 1))}
        t = extract_pairs(session_events(["a1", "b1", "a2", "a1"]), JOURNAL, True, res)
        assert t.counts == {("JA", "JB"): 1, ("JB", "JA"): 1}

    def test_missing_session(self):
        with pytest.raises(MissingSession):
            extract_pairs(session_events(["a", "b"], session=""))

    def test_missing_journal_mapping(self):
        with pytest.raises(MissingJournalMapping):
            extract_pairs(session_events(["a", "b"]), JOURNAL, True, {})
        with pytest.raises(MissingJournalMapping):
            extract_pairs(session_events(["a", "b"]), JOURNAL, True, None)

    def test_order_by_timestamp_then_event_id(self):
        ev = session_events(["a", "b", "c"])
        shuffled = [ev[2], ev[0], ev[1]]
        assert extract_pairs(shuffled).counts == extract_pairs(ev).counts
        # equal timestamps fall back to the event id
        tied = [make_event(1, "s", "u", "AbstractView", "y", 5), make_event(0, "s", "u", "AbstractView", "x", 5)]
        assert extract_pairs(tied).counts == {("x", "y"): 1}

    def test_double_click_dedup(self):
        ev = session_events(["a", "a", "b"], step=3)
        assert extract_pairs(ev).counts == {("a", "b"): 1}
        slow = session_events(["a", "a", "b"], step=60)
        assert extract_pairs(slow).counts == {("a", "b"): 1}
        assert extract_pairs(slow, allow_self=True).counts == {("a", "a"): 1, ("a", "b"): 1}
        assert extract_pairs(ev, allow_self=True).counts == {("a", "b"): 1}
        assert extract_pairs(ev, allow_self=True, dedup_window=-1).counts == {("a", "a"): 1, ("a", "b"): 1}

    def test_window_truncates_sessions(self):
        ev = session_events(["a", "b", "c", "d"], step=100)
        assert extract_pairs(ev, window=(100, 300)).counts == {("b", "c"): 1}

    def test_undirected_cooccurrence(self):
        t = extract_pairs(session_events(["d1", "d2", "d1", "d3"]), ARTICLE, False)
        assert t.counts == {("d1", "d2"): 1, ("d2", "d1"): 1, ("d1", "d3"): 1, ("d3", "d1"): 1,
                            ("d2", "d3"): 1, ("d3", "d2"): 1}

    def test_matches_oracle_on_random_logs(self):
        rnd = random.Random(7)
        sessions = [[rnd.choice("abcdef") for _ in range(rnd.randint(1, 8))] for _ in range(200)]
        # 60 s spacing keeps dedup out of play; both sides drop self-pairs
        tm = transition_matrix(extract_pairs(log_from_sessions(sessions)))
        want = transition_oracle(sessions)
        got = {(a, b): tm.prob(a, b) for a in tm.nodes for b in tm.nodes if tm.prob(a, b) > 0}
        assert got.keys() == want.keys()
        for k in want:
            assert got[k] == pytest.approx(want[k], abs=1e-15)


@st.composite
def session_lists(draw):
    alphabet = "abcde"
    return draw(st.lists(st.lists(st.sampled_from(alphabet), min_size=1, max_size=10), min_size=1, max_size=20))


class TestPairProperties:
    @given(session_lists())
    def test_count_conservation(self, sessions):
        t = extract_pairs(log_from_sessions(sessions), allow_self=True, dedup_window=-1)
        assert t.total() == sum(max(0, len(s) - 1) for s in sessions)

    @given(session_lists())
    def test_out_totals_sum_counts(self, sessions):
        t = extract_pairs(log_from_sessions(sessions))
        for s, tot in t.out_totals.items():
            assert tot == sum(c for (a, _), c in t.counts.items() if a == s)
        assert all(a != b for a, b in t.counts)

    def test_asymmetry_preserved(self):
        t = extract_pairs(log_from_sessions([["a", "b"], ["a", "b"], ["a", "b"], ["b", "a"]]))
        assert t.counts[("a", "b")] == 3 and t.counts[("b", "a")] == 1

    @given(session_lists(), st.integers(1, 50))
    def test_transition_scale_invariant(self, sessions, factor):
        t = extract_pairs(log_from_sessions(sessions))
        if len(t) == 0:
            return
        scaled = PairFrequencyTable.from_counts({k: c * factor for k, c in t.counts.items()})
        a, b = transition_matrix(t), transition_matrix(scaled)
        assert a.nodes == b.nodes
        np.testing.assert_allclose(a.dense(), b.dense(), rtol=0, atol=1e-15)

    @given(st.lists(session_lists(), min_size=3, max_size=3))
    def test_merge_associative(self, parts):
        logs = []
        for i, sessions in enumerate(parts):
            ev = log_from_sessions(sessions)
            logs.append(extract_pairs([replace(e, session_id=f"p{i}{e.session_id}") for e in ev]))
        abc = merge_tables([merge_tables(logs[:2]), logs[2]])
        a_bc = merge_tables([logs[0], merge_tables(logs[1:])])
        assert abc.counts == a_bc.counts == merge_tables(logs[::-1]).counts

    def test_merge_equals_whole(self):
        rnd = random.Random(3)
        sessions = [[rnd.choice("abcdefg") for _ in range(rnd.randint(1, 6))] for _ in range(60)]
        whole = extract_pairs(log_from_sessions(sessions))
        parts = [extract_pairs(log_from_sessions(sessions[i:i + 20])) for i in (0, 20, 40)]
        assert merge_tables(parts).counts == whole.counts

    def test_merge_empty(self):
        with pytest.raises(EmptyTable):
            merge_tables([])


class TestTransitionMatrix:
    def test_fixture(self):
        tm = transition_matrix(PairFrequencyTable.from_counts({("d1", "d2"): 1, ("d1", "d3"): 1, ("d2", "d1"): 1}))
        assert tm.prob("d1", "d2") == 0.5 and tm.prob("d1", "d3") == 0.5
        assert tm.prob("d2", "d1") == 1.0
        assert tm.dangling == frozenset({"d3"})
        assert tm.row_sums().tolist() == [1.0, 1.0, 0.0]

    def test_single_pair(self):
        tm = transition_matrix(PairFrequencyTable.from_counts({("a", "b"): 7}))
        assert tm.prob("a", "b") == 1.0

    def test_empty(self):
        with pytest.raises(EmptyTable):
            transition_matrix(extract_pairs(session_events(["a"])))

    def test_row_sums_on_seeded_logs(self):
        for seed in range(1000):
            rnd = random.Random(seed)
            n = rnd.randint(2, 12)
            counts = {}
            for _ in range(rnd.randint(1, 40)):
                a, b = rnd.randrange(n), rnd.randrange(n)
                if a != b:
                    counts[(f"n{a}", f"n{b}")] = counts.get((f"n{a}", f"n{b}"), 0) + rnd.randint(1, 1000)
            if not counts:
                continue
            tm = transition_matrix(PairFrequencyTable.from_counts(counts))
            sums = tm.row_sums()
            live = np.array([k not in tm.dangling for k in tm.nodes])
            assert np.all(np.abs(sums[live] - 1.0) <= 1e-12)
            assert np.all(sums[~live] == 0)
            d = tm.dense()
            assert d.min() >= 0 and d.max() <= 1


class TestFormats:
    def test_pairs_tsv_round_trip(self, tmp_path):
        t = extract_pairs(session_events(["d1", "d2", "d1", "d3"]))
        write_pairs(tmp_path / "p.tsv", t)
        text = (tmp_path / "p.tsv").read_text()
        assert text == "d1\td2\t1\nd1\td3\t1\nd2\td1\t1\n"
        assert read_pairs(tmp_path / "p.tsv").counts == t.counts

    @pytest.mark.parametrize("threshold", [100, 1])
    def test_matrix_round_trip(self, threshold):
        tm = transition_matrix(PairFrequencyTable.from_counts({("a", "b"): 1, ("a", "c"): 2, ("b", "a"): 3}))
        text = format_matrix(tm, threshold)
        assert text.startswith("node," if threshold == 100 else "#nodes,")
        back = parse_matrix(text)
        assert back.nodes == tm.nodes
        assert back.dangling == tm.dangling
        np.testing.assert_array_equal(back.dense(), tm.dense())
