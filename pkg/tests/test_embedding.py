import json
import random

import httpx
import numpy as np
import pytest

from groupscope import fixtures
from groupscope.embedding import (EmbedderConfig, HashingEmbedder, RemoteEmbedder, RemoteEmbedderConfig, cosine,
                                  embed_doc, embed_query, remote_embed)
from groupscope.errors import BadResponse, DimensionMismatch, EmbedTimeout, EmptyText
from groupscope.textproc import preprocess_query


def test_deterministic_and_unit_norm():
    cfg = EmbedderConfig(seed=3)
    a = embed_doc(cfg, "Fresh cupcakes with sprinkles")
    b = embed_doc(cfg, "Fresh cupcakes with sprinkles")
    assert np.array_equal(a, b)
    assert abs(np.linalg.norm(a) - 1.0) <= 1e-6
    assert a.shape == (64,)


def test_empty_text_rejected():
    with pytest.raises(EmptyText):
        embed_doc(EmbedderConfig(), " ... ")


@pytest.mark.parametrize("kwargs", [{"dim": 4}, {"ngram_size": 1}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        EmbedderConfig(**kwargs)


def test_synonym_collapse(synonym_embedder):
    a = synonym_embedder.embed_doc("cupcakes")
    b = synonym_embedder.embed_doc("small individual cakes")
    assert abs(cosine(a, b) - 1.0) <= 1e-6


def test_cappuccino_paraphrase(synonym_embedder):
    q = synonym_embedder.embed_query(preprocess_query("Italian coffee drink"))
    d = synonym_embedder.embed_doc("cappuccino")
    assert cosine(q, d) >= 0.9


def test_towers_agree():
    cfg = EmbedderConfig()
    assert abs(cosine(embed_query(cfg, preprocess_query("cupcakes")), embed_doc(cfg, "cupcakes")) - 1.0) <= 1e-6


def test_unrelated_strings_are_far_apart():
    rng = random.Random(42)
    letters = "abcdefghijklmnopqrstuvwxyz"
    emb = HashingEmbedder()

    def rand_text():
        return " ".join("".join(rng.choice(letters) for _ in range(rng.randint(3, 8))) for _ in range(20))

    sims = sorted(abs(cosine(emb.embed_doc(rand_text()), emb.embed_doc(rand_text()))) for _ in range(1000))
    assert sims[int(0.99 * len(sims)) - 1] < 0.5


def test_cosine_identity_orthogonal_and_oracle():
    e1, e2 = np.eye(8)[0], np.eye(8)[1]
    assert cosine(e1, e1) == 1.0
    assert cosine(e1, e2) == 0.0
    rng = np.random.default_rng(0)
    for _ in range(100):
        a, b = rng.normal(size=16), rng.normal(size=16)
        a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
        oracle = sum(x * y for x, y in zip(a, b)) / (np.sqrt(sum(x * x for x in a)) * np.sqrt(sum(y * y for y in b)))
        assert abs(cosine(a, b) - oracle) <= 1e-9
    with pytest.raises(DimensionMismatch):
        cosine(np.ones(3), np.ones(4))


def test_config_round_trip():
    cfg = EmbedderConfig(dim=32, seed=4, synonym_table=fixtures.synonym_table())
    assert EmbedderConfig.from_dict(cfg.to_dict()) == cfg


# -- remote embedder --------------------------------------------------------

def _client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_remote_vectors_are_renormalized():
    def handler(request):
        n = len(json.loads(request.content)["texts"])
        return httpx.Response(200, json={"vectors": [[3.0, 4.0] + [0.0] * 6] * n})

    cfg = RemoteEmbedderConfig(endpoint="http://embed.test/v1", dim=8)
    out = remote_embed(cfg, ["a", "b"], "doc", client=_client(handler))
    assert out.shape == (2, 8)
    assert np.allclose(out[:, :2], [[0.6, 0.8]] * 2)


def test_remote_wrong_dimension():
    cfg = RemoteEmbedderConfig(endpoint="http://embed.test/v1", dim=8)
    handler = lambda r: httpx.Response(200, json={"vectors": [[1.0] * 5]})  # noqa: E731
    with pytest.raises(DimensionMismatch):
        remote_embed(cfg, ["a"], "query", client=_client(handler))


def test_remote_bad_status_and_timeout():
    cfg = RemoteEmbedderConfig(endpoint="http://embed.test/v1", dim=8)
    with pytest.raises(BadResponse) as exc:
        remote_embed(cfg, ["a"], "doc", client=_client(lambda r: httpx.Response(503)))
    assert exc.value.status == 503

    def slow(request):
        raise httpx.ReadTimeout("too slow", request=request)

    with pytest.raises(EmbedTimeout):
        remote_embed(cfg, ["a"], "doc", client=_client(slow))


def test_remote_batch_order_preserved():
    def handler(request):
        body = json.loads(request.content)
        assert body["tower"] == "doc"
        vecs = []
        for t in body["texts"]:
            v = [0.0] * 8
            v[0] = 1.0
            v[1] = float(int(t))  # tag each vector with its input index
            vecs.append(v)
        return httpx.Response(200, json={"vectors": vecs})

    cfg = RemoteEmbedderConfig(endpoint="http://embed.test/v1", dim=8, batch_size=50, max_in_flight=3)
    out = RemoteEmbedder(cfg, client=_client(handler)).embed_docs([str(i) for i in range(256)])
    assert out.shape == (256, 8)
    recovered = np.round(out[:, 1] / out[:, 0]).astype(int)
    assert recovered.tolist() == list(range(256))


def test_remote_requires_endpoint(monkeypatch):
    monkeypatch.delenv("EMBED_ENDPOINT", raising=False)
    with pytest.raises(ValueError):
        RemoteEmbedder(RemoteEmbedderConfig.from_env())
    monkeypatch.setenv("EMBED_ENDPOINT", "http://x.test")
    monkeypatch.setenv("EMBED_TOKEN", "secret")
    cfg = RemoteEmbedderConfig.from_env()
    assert (cfg.endpoint, cfg.token) == ("http://x.test", "secret")
