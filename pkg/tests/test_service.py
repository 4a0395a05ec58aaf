import json
import threading
from concurrent.futures import ThreadPoolExecutor

import httpx
import pytest

from groupscope.errors import ValidationError
from groupscope.service import make_server, parse_bind


@pytest.fixture()
def server(tiny_corpus):
    from groupscope.engine import Engine

    srv = make_server(Engine.from_corpus(tiny_corpus), "127.0.0.1:0")
    t = threading.Thread(target=srv.serve_forever, args=(0.05,), daemon=True)
    t.start()
    yield srv
    srv.shutdown()
    srv.server_close()


def post(srv, gid, body):
    return httpx.post(f"{srv.url}/v1/groups/{gid}/search", content=json.dumps(body) if not isinstance(body, bytes)
                      else body, timeout=10)


def test_health_and_stats(server):
    assert httpx.get(f"{server.url}/v1/health").json() == {"status": "ready"}
    stats = httpx.get(f"{server.url}/v1/stats").json()
    assert stats["posts"] == 4 and stats["groups"] == 2 and stats["dim"] == 64
    assert httpx.get(f"{server.url}/v1/nope").status_code == 404


def test_search_endpoint(server):
    r = post(server, "g1", {"query": "cupcakes", "k": 5})
    assert r.status_code == 200
    body = r.json()
    assert body["results"][0]["post_id"] == "p1"
    assert set(body["timing_us"]) == {"preprocess", "keyword", "ebr", "fuse", "rank"}


@pytest.mark.parametrize("body,status", [
    ({"query": "cupcakes", "k": 0}, 400), ({"query": "cupcakes", "k": 101}, 400),
    ({"query": "cupcakes", "k": "5"}, 400), ({"query": "   "}, 400), ({}, 400),
    ({"query": "x", "fusion": {"oops": 1}}, 400), ({"query": "x", "fusion": {"w_kw": 3}}, 400),
    (b"{not json", 400), ([1, 2], 400),
])
def test_bad_requests(server, body, status):
    r = post(server, "g1", body)
    assert r.status_code == status
    assert "error" in r.json()


def test_unknown_group_is_404(server):
    assert post(server, "zz", {"query": "cupcakes"}).status_code == 404


def test_internal_errors_do_not_leak(server):
    class Exploding:
        def search(self, *a):
            raise RuntimeError("secret path /etc/shadow")

    real = server.state.engine
    server.state.engine = Exploding()
    try:
        r = post(server, "g1", {"query": "x"})
    finally:
        server.state.engine = real
    assert r.status_code == 500 and "secret" not in r.text


def test_not_ready_while_loading(tiny_corpus):
    from groupscope.engine import Engine

    gate = threading.Event()

    def loader():
        gate.wait(10)
        return Engine.from_corpus(tiny_corpus)

    srv = make_server(bind="127.0.0.1:0", loader=loader)
    threading.Thread(target=srv.serve_forever, args=(0.05,), daemon=True).start()
    try:
        r = httpx.get(f"{srv.url}/v1/health")
        assert r.status_code == 503 and r.json()["status"] == "loading"
        assert post(srv, "g1", {"query": "x"}).status_code == 503
        gate.set()
        assert srv.state.ready.wait(10)
        assert httpx.get(f"{srv.url}/v1/health").status_code == 200
    finally:
        srv.shutdown()
        srv.server_close()


def test_failed_load_reports_failed():
    def loader():
        raise OSError("index missing")

    srv = make_server(bind="127.0.0.1:0", loader=loader)
    threading.Thread(target=srv.serve_forever, args=(0.05,), daemon=True).start()
    try:
        for _ in range(100):
            if srv.state.error:
                break
            threading.Event().wait(0.01)
        assert httpx.get(f"{srv.url}/v1/health").json()["status"] == "failed"
    finally:
        srv.shutdown()
        srv.server_close()


def test_burst_of_identical_requests(server):
    def call(_):
        body = post(server, "g1", {"query": "bread frosting", "k": 3}).json()
        body.pop("timing_us")
        return json.dumps(body, sort_keys=True)

    with ThreadPoolExecutor(8) as pool:
        bodies = set(pool.map(call, range(16)))
    assert len(bodies) == 1


def test_parse_bind(monkeypatch):
    assert parse_bind("0.0.0.0:9000") == ("0.0.0.0", 9000)
    monkeypatch.setenv("BIND_ADDR", "127.0.0.1:7000")
    assert parse_bind(None) == ("127.0.0.1", 7000)
    with pytest.raises(ValidationError):
        parse_bind("localhost")
