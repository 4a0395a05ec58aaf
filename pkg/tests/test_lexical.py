import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from groupscope import fixtures
from groupscope.corpus import Corpus, Group, Post
from groupscope.errors import FormatError, GroupMismatch, UnknownGroup, UnknownPost, VersionMismatch
from groupscope.lexical import (Bm25Params, GroupPartition, build_lexical_index, bm25_score, load_lexical_index,
                                save_lexical_index, search_lexical, tfidf_score)
from groupscope.textproc import preprocess_query, tokenize

from oracles import BruteForceGroup


def test_posting_list_is_exact(tiny_corpus):
    idx = build_lexical_index(tiny_corpus)
    assert idx.posting_list("g1", "cupcakes").entries == (("p1", 1),)
    assert idx.posting_list("g1", "bread").entries == (("p2", 2),)
    assert idx.posting_list("g1", "nothing").entries == ()


def test_empty_group_partition():
    idx = build_lexical_index(Corpus([Group("g0", "empty")], []))
    assert idx.doc_count("g0") == 0
    assert search_lexical(idx, "g0", preprocess_query("cupcakes"), 5) == []


def test_doc_freq_matches_brute_force():
    corpus = fixtures.generate_fixture_corpus(9, 5, 2000)
    idx = build_lexical_index(corpus)
    for gid in corpus.group_ids():
        oracle = BruteForceGroup(corpus, gid)
        assert set(idx.terms(gid)) == set(oracle.df)
        for term, df in oracle.df.items():
            assert idx.doc_freq(gid, term) == df
        assert idx.avg_doc_len(gid) == pytest.approx(oracle.avgdl, abs=1e-12)


def test_bm25_zero_for_no_match(tiny_corpus):
    idx = build_lexical_index(tiny_corpus)
    assert bm25_score(idx, "g1", preprocess_query("zebra"), "p1") == 0.0
    assert tfidf_score(idx, "g1", preprocess_query("zebra"), "p1") == 0.0


def test_bm25_single_doc_hand_value():
    corpus = Corpus([Group("g", "g")], [Post("p", "g", "u", "cupcakes", 0)])
    idx = build_lexical_index(corpus)
    assert bm25_score(idx, "g", preprocess_query("cupcakes"), "p") == pytest.approx(math.log(4 / 3), abs=1e-12)


def test_tfidf_hand_value():
    corpus = Corpus([Group("g", "g")], [Post("a", "g", "u", "cupcakes w x y", 0),
                                        Post("b", "g", "u", "bread w x y", 0)])
    idx = build_lexical_index(corpus)
    assert tfidf_score(idx, "g", preprocess_query("cupcakes"), "a") == pytest.approx(math.log(2) / 2, abs=1e-12)


def test_scores_match_oracle_on_small_fixture(tiny_corpus):
    idx = build_lexical_index(tiny_corpus)
    oracle = BruteForceGroup(tiny_corpus, "g1")
    for raw in ["cupcakes", "bread and butter", "the weekend tips", "sprinkles cupcakes bread"]:
        q = preprocess_query(raw)
        for pid in oracle.docs:
            assert abs(bm25_score(idx, "g1", q, pid) - oracle.bm25(q.terms(), pid)) <= 1e-9
            assert abs(tfidf_score(idx, "g1", q, pid) - oracle.tfidf(q.terms(), pid)) <= 1e-9


def test_score_errors(tiny_corpus):
    idx = build_lexical_index(tiny_corpus)
    q = preprocess_query("cupcakes")
    with pytest.raises(UnknownPost):
        bm25_score(idx, "g1", q, "nope")
    with pytest.raises(GroupMismatch):
        bm25_score(idx, "g1", q, "p4")
    with pytest.raises(UnknownGroup):
        search_lexical(idx, "g9", q, 5)


def test_single_match_and_motivating_miss(tiny_corpus):
    idx = build_lexical_index(tiny_corpus)
    hits = search_lexical(idx, "g1", preprocess_query("cupcakes"), 10)
    assert [h.post_id for h in hits] == ["p1"]
    assert search_lexical(idx, "g2", preprocess_query("small individual cakes"), 10) == []


def test_search_matches_oracle_on_generated_corpus():
    corpus = fixtures.generate_fixture_corpus(12, 3, 400)
    idx = build_lexical_index(corpus)
    rng = random.Random(0)
    vocab = sorted({t for p in corpus.posts.values() for t in tokenize(p.text)})
    for gid in corpus.group_ids():
        oracle = BruteForceGroup(corpus, gid)
        for _ in range(20):
            q = preprocess_query(" ".join(rng.sample(vocab, rng.randint(1, 4))))
            got = [(h.post_id, h.bm25) for h in search_lexical(idx, gid, q, 10)]
            want = oracle.search(q.terms(), 10)
            assert [p for p, _ in got] == [p for p, _ in want]
            assert all(abs(a[1] - b[1]) <= 1e-9 for a, b in zip(got, want))


def test_scope_isolation():
    corpus = fixtures.generate_fixture_corpus(3, 4, 60)
    idx = build_lexical_index(corpus)
    for gid in corpus.group_ids():
        for h in search_lexical(idx, gid, preprocess_query("cupcakes flour espresso match"), 100):
            assert corpus.post(h.post_id).group_id == gid


def test_adding_unrelated_post_keeps_result_set():
    # BM25 values depend on N and avgdl, so the added post can reorder hits;
    # the invariant is on which posts are returned.
    base = fixtures.generate_fixture_corpus(3, 1, 60)
    q = preprocess_query("cupcakes")
    before = {h.post_id for h in search_lexical(build_lexical_index(base), "g1", q, 1000)}
    extra = Post("g1-zzz", "g1", "u", "passport luggage flight", 0)
    grown = Corpus(base.groups.values(), [*base.posts.values(), extra])
    after = {h.post_id for h in search_lexical(build_lexical_index(grown), "g1", q, 1000)}
    assert before == after


def _contrib(tf, df, n, dl=10, avgdl=10.0):
    # one term in a partition of n docs with fixed lengths; doc 0 carries tf occurrences
    ids = np.arange(df, dtype=np.int32)
    tfs = np.full(df, 1, dtype=np.int32)
    tfs[0] = tf
    doc_len = np.full(n, int(avgdl), dtype=np.int32)
    doc_len[0] = dl
    part = GroupPartition(tuple(f"p{i:04d}" for i in range(n)), doc_len, {"t": (ids, tfs)})
    return float(part.bm25_contrib("t", Bm25Params())[1][0])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 30))
def test_bm25_contribution_monotone(tf, df, extra):
    n = df + extra + 1
    assert _contrib(tf + 1, df, n) > _contrib(tf, df, n)
    assert _contrib(tf, df + 1, n) < _contrib(tf, df, n)


def test_idf_shape():
    from groupscope.lexical import bm25_idf

    for n in (1, 5, 100):
        vals = [bm25_idf(n, df) for df in range(1, n + 1)]
        assert all(v > 0 for v in vals)
        assert vals == sorted(vals, reverse=True)


def test_persistence_round_trip(tmp_path):
    corpus = fixtures.generate_fixture_corpus(5, 3, 50)
    idx = build_lexical_index(corpus, Bm25Params(1.5, 0.6))
    save_lexical_index(idx, tmp_path / "lex.gsix")
    loaded = load_lexical_index(tmp_path / "lex.gsix")
    assert loaded == idx
    q = preprocess_query("cupcakes flour")
    assert search_lexical(loaded, "g1", q, 10) == search_lexical(idx, "g1", q, 10)


def test_persistence_rejects_bad_files(tmp_path):
    idx = build_lexical_index(fixtures.generate_fixture_corpus(5, 2, 10))
    path = tmp_path / "lex.gsix"
    save_lexical_index(idx, path)
    raw = bytearray(path.read_bytes())
    bumped = bytearray(raw)
    bumped[4] = 99
    (tmp_path / "v.gsix").write_bytes(bytes(bumped))
    with pytest.raises(VersionMismatch):
        load_lexical_index(tmp_path / "v.gsix")
    (tmp_path / "t.gsix").write_bytes(bytes(raw[: len(raw) // 2]))
    with pytest.raises(FormatError):
        load_lexical_index(tmp_path / "t.gsix")
    (tmp_path / "m.gsix").write_bytes(b"NOPE" + bytes(raw[4:]))
    with pytest.raises(FormatError):
        load_lexical_index(tmp_path / "m.gsix")
