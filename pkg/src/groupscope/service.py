"""JSON-over-HTTP search service hosting one immutable :class:`Engine`.

Endpoints:
  POST /v1/groups/{group_id}/search   body {"query": str, "k": int, "fusion": {...}}
  GET  /v1/health                     200 once loaded, 503 before
  GET  /v1/stats                      corpus and index counters
"""

from __future__ import annotations

import json
import logging
import os
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable
from urllib.parse import unquote

from .errors import EmptyQuery, GroupScopeError, UnknownGroup, ValidationError

logger = logging.getLogger(__name__)

MAX_K = 100
MAX_BODY = 1 << 20
DEFAULT_BIND = "127.0.0.1:8080"
_FUSION_KEYS = {"method", "w_kw", "w_ebr", "rrf_c", "k_kw", "k_ebr"}


class ServiceState:
    def __init__(self):
        self.engine = None
        self.error: str | None = None
        self.ready = threading.Event()
        self._lock = threading.Lock()
        self.requests = 0

    def count(self) -> None:
        with self._lock:
            self.requests += 1


def parse_bind(addr: str | None) -> tuple[str, int]:
    addr = addr or os.environ.get("BIND_ADDR") or DEFAULT_BIND
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValidationError(f"bind address {addr!r} must look like host:port")
    return host or "127.0.0.1", int(port)


def validate_search(body) -> tuple[str, int, dict | None]:
    if not isinstance(body, dict):
        raise ValidationError("request body must be a JSON object")
    query = body.get("query")
    if not isinstance(query, str) or not query.strip():
        raise EmptyQuery("query must be a non-empty string")
    k = body.get("k", 10)
    if isinstance(k, bool) or not isinstance(k, int) or not 1 <= k <= MAX_K:
        raise ValidationError(f"k must be an integer in [1, {MAX_K}]")
    fusion = body.get("fusion")
    if fusion is not None:
        if not isinstance(fusion, dict) or set(fusion) - _FUSION_KEYS:
            raise ValidationError(f"fusion overrides may only set {sorted(_FUSION_KEYS)}")
    return query, k, fusion


def stats(engine) -> dict:
    parts = engine.vector.partitions
    return {
        "groups": len(engine.corpus.group_ids()),
        "posts": len(engine.corpus),
        "lexical_terms": sum(len(p.postings) for p in engine.lexical.partitions.values()),
        "graph_partitions": sum(1 for p in parts.values() if p.kind == "graph"),
        "flat_partitions": sum(1 for p in parts.values() if p.kind == "flat"),
        "dim": engine.vector.dim,
        "retrieval": engine.retrieval,
    }


def _make_handler(state: ServiceState):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        server_version = "groupscope"

        def log_message(self, fmt, *args):  # route through logging, not stderr
            logger.debug("%s - %s", self.address_string(), fmt % args)

        def _send(self, status: int, payload: dict) -> None:
            data = (json.dumps(payload, sort_keys=True) + "\n").encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def _error(self, status: HTTPStatus, message: str) -> None:
            self._send(status, {"error": message, "status": int(status)})

        def do_GET(self):
            state.count()
            if self.path == "/v1/health":
                if state.ready.is_set():
                    self._send(HTTPStatus.OK, {"status": "ready"})
                else:
                    body = {"status": "failed" if state.error else "loading"}
                    self._send(HTTPStatus.SERVICE_UNAVAILABLE, body)
            elif self.path == "/v1/stats":
                if not state.ready.is_set():
                    self._error(HTTPStatus.SERVICE_UNAVAILABLE, "not ready")
                    return
                self._send(HTTPStatus.OK, {**stats(state.engine), "requests_served": state.requests})
            else:
                self._error(HTTPStatus.NOT_FOUND, "no such endpoint")

        def do_POST(self):
            state.count()
            parts = self.path.split("/")
            # ['', 'v1', 'groups', gid, 'search']
            if len(parts) != 5 or parts[1:3] != ["v1", "groups"] or parts[4] != "search" or not parts[3]:
                self._error(HTTPStatus.NOT_FOUND, "no such endpoint")
                return
            group_id = unquote(parts[3])
            length = int(self.headers.get("Content-Length") or 0)
            if length > MAX_BODY:
                self._error(HTTPStatus.REQUEST_ENTITY_TOO_LARGE, "body too large")
                return
            raw = self.rfile.read(length)
            if not state.ready.is_set():
                self._error(HTTPStatus.SERVICE_UNAVAILABLE, "not ready")
                return
            try:
                body = json.loads(raw.decode("utf-8") or "null")
                query, k, fusion = validate_search(body)
                result = state.engine.search(group_id, query, k, fusion)
            except (json.JSONDecodeError, UnicodeDecodeError):
                self._error(HTTPStatus.BAD_REQUEST, "body is not valid JSON")
            except UnknownGroup as exc:
                self._error(HTTPStatus.NOT_FOUND, str(exc))
            except (ValidationError, ValueError) as exc:
                self._error(HTTPStatus.BAD_REQUEST, str(exc))
            except GroupScopeError as exc:
                logger.error("search failed: %s", exc)
                self._error(HTTPStatus.INTERNAL_SERVER_ERROR, "search failed")
            except Exception:  # noqa: BLE001 - never leak internals
                logger.exception("unexpected failure")
                self._error(HTTPStatus.INTERNAL_SERVER_ERROR, "internal error")
            else:
                self._send(HTTPStatus.OK, result.to_dict())

    return Handler


class SearchServer(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 128  # listen backlog; the socketserver default of 5 resets bursts

    def __init__(self, address: tuple[str, int], state: ServiceState):
        self.state = state
        super().__init__(address, _make_handler(state))

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"


def make_server(engine=None, bind: str | None = None, loader: Callable[[], object] | None = None) -> SearchServer:
    """Create a server; with ``loader`` the engine loads on a background thread and health reports loading."""
    state = ServiceState()
    server = SearchServer(parse_bind(bind), state)
    if engine is not None:
        state.engine = engine
        state.ready.set()
    elif loader is not None:
        def load():
            try:
                state.engine = loader()
            except Exception as exc:  # noqa: BLE001
                state.error = f"{type(exc).__name__}: {exc}"
                logger.error("engine failed to load: %s", state.error)
            else:
                state.ready.set()

        threading.Thread(target=load, name="engine-loader", daemon=True).start()
    return server


def serve(config, bind: str | None = None) -> None:
    """Load the configured artifacts (failing fast), then serve until interrupted."""
    from .engine import Engine

    engine = Engine.from_config(config)
    server = make_server(engine, bind)
    logger.info("serving on %s", server.url)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
