import random

import pytest

from groupscope.blend import Candidate, FusionConfig, fuse_l1, normalize_scores, retrieve_blended
from groupscope.errors import RetrievalFailed, UnknownGroup
from groupscope.lexical import search_lexical
from groupscope.textproc import preprocess_query
from groupscope.vector_index import ann_search


def random_candidates(rng, n=None):
    """Candidates with random provenance, raw scores and consistent per-source ranks."""
    n = n or rng.randint(1, 30)
    cands = []
    for i in range(n):
        kw, eb = rng.choice([(True, False), (False, True), (True, True)])
        cands.append(Candidate(f"p{i:03d}", kw, eb, bm25=rng.uniform(0, 20) if kw else 0.0,
                               cos_sim=rng.uniform(-1, 1)))
    for flag, score, rank in (("from_keyword", "bm25", "kw_rank"), ("from_ebr", "cos_sim", "ebr_rank")):
        found = sorted((c for c in cands if getattr(c, flag)), key=lambda c: (-getattr(c, score), c.post_id))
        for r, c in enumerate(found, start=1):
            setattr(c, rank, r)
    return cands


def test_rrf_rank_one_in_both():
    c = Candidate("a", True, True, bm25=3.0, cos_sim=0.5, kw_rank=1, ebr_rank=1)
    (out,) = fuse_l1(normalize_scores([c]), FusionConfig(method="rrf"))
    assert out.l1_score == pytest.approx(2 / 61, abs=1e-15)


def test_linear_formula():
    cands = normalize_scores([Candidate("a", True, False, bm25=10.0, kw_rank=1),
                              Candidate("b", True, True, bm25=5.0, cos_sim=0.9, kw_rank=2, ebr_rank=1),
                              Candidate("c", False, True, cos_sim=0.1, ebr_rank=2)])
    out = {c.post_id: c.l1_score for c in fuse_l1(cands, FusionConfig(w_kw=0.3, w_ebr=0.7))}
    assert out == pytest.approx({"a": 0.3, "b": 0.7, "c": 0.0})


def test_weight_collapse_reproduces_keyword_order():
    rng = random.Random(3)
    for _ in range(50):
        cands = normalize_scores(random_candidates(rng))
        fused = fuse_l1(cands, FusionConfig(w_kw=1.0, w_ebr=0.0))
        kw_fused = [c.post_id for c in fused if c.from_keyword]
        kw_order = [c.post_id for c in sorted((c for c in cands if c.from_keyword), key=lambda c: c.kw_rank)]
        assert kw_fused == kw_order


@pytest.mark.parametrize("method", ["linear", "rrf"])
def test_fusion_permutation_and_order(method):
    rng = random.Random(11)
    for _ in range(200):
        cands = normalize_scores(random_candidates(rng))
        fused = fuse_l1(list(cands), FusionConfig(method=method))
        assert sorted(c.post_id for c in fused) == sorted(c.post_id for c in cands)
        scores = [c.l1_score for c in fused]
        assert scores == sorted(scores, reverse=True)
        for c in fused:
            assert 0.0 <= c.bm25_norm <= 1.0 and 0.0 <= c.cos_norm <= 1.0


def test_affine_invariance_of_linear_fusion():
    rng = random.Random(5)
    for _ in range(100):
        cands = random_candidates(rng)
        a, b = rng.uniform(0.1, 10.0), rng.uniform(-5, 5)
        scaled = [Candidate(c.post_id, c.from_keyword, c.from_ebr, bm25=a * c.bm25 + b if c.from_keyword else 0.0,
                            cos_sim=c.cos_sim, kw_rank=c.kw_rank, ebr_rank=c.ebr_rank) for c in cands]
        x = [c.post_id for c in fuse_l1(normalize_scores(cands))]
        y = [c.post_id for c in fuse_l1(normalize_scores(scaled))]
        assert x == y


def test_aliases_and_validation():
    assert FusionConfig(method="reciprocal-rank").method == "rrf"
    assert FusionConfig(method="normalized-linear").method == "linear"
    with pytest.raises(ValueError):
        FusionConfig(w_kw=0.7, w_ebr=0.7)
    with pytest.raises(ValueError):
        FusionConfig(rrf_c=0)
    with pytest.raises(ValueError):
        FusionConfig(method="borda")
    assert FusionConfig().with_overrides({"w_kw": 0.8}).w_ebr == pytest.approx(0.2)


def test_union_completeness_and_backfill(mixed_engine, mixed_fx):
    e = mixed_engine
    for q in mixed_fx.queries[:12]:
        pq = preprocess_query(q.query_text)
        cfg = FusionConfig(k_kw=20, k_ebr=20)
        res = retrieve_blended(e.lexical, e.vector, e.embedder, q.group_id, pq, cfg)
        kw = {h.post_id for h in search_lexical(e.lexical, q.group_id, pq, 20)}
        eb = {p for p, _ in ann_search(e.vector, q.group_id, e.embedder.embed_query(pq), 20)}
        got = {c.post_id for c in res.candidates}
        assert got == kw | eb
        assert not res.degraded
        for c in res.candidates:
            assert c.from_keyword or c.from_ebr
            assert (c.kw_rank is not None) == c.from_keyword
            assert (c.ebr_rank is not None) == c.from_ebr
            expected = float(e.vector.vector(q.group_id, c.post_id) @ e.embedder.embed_query(pq))
            assert c.cos_sim == pytest.approx(expected, abs=1e-12)


def test_blended_never_returns_fewer_than_keyword(mixed_engine, mixed_fx):
    e = mixed_engine
    for q in mixed_fx.queries:
        pq = preprocess_query(q.query_text)
        kw = search_lexical(e.lexical, q.group_id, pq, 10)
        if len(kw) < 10:
            res = retrieve_blended(e.lexical, e.vector, e.embedder, q.group_id, pq, FusionConfig(k_kw=10, k_ebr=10))
            assert len(res.candidates) >= len(kw)


class _Broken:
    dim = 64

    def embed_query(self, query):
        raise RuntimeError("embedder down")


def test_one_path_failure_degrades(mixed_engine):
    e = mixed_engine
    pq = preprocess_query("flour")
    res = retrieve_blended(e.lexical, e.vector, _Broken(), "g1", pq)
    assert res.degraded and "ebr" in res.failures
    assert res.candidates and all(c.from_keyword for c in res.candidates)


def test_both_paths_failing_raises(mixed_engine):
    e = mixed_engine

    class BadLex:
        partitions = {}

        def partition(self, gid):
            raise RuntimeError("lexical down")

    with pytest.raises(RetrievalFailed):
        retrieve_blended(BadLex(), e.vector, _Broken(), "g1", preprocess_query("flour"))


def test_unknown_group_propagates(mixed_engine):
    e = mixed_engine
    with pytest.raises(UnknownGroup):
        retrieve_blended(e.lexical, e.vector, e.embedder, "nope", preprocess_query("flour"))
