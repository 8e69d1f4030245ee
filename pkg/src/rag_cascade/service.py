"""HTTP query endpoint over shared immutable indexes.

POST /query {"text": ...} runs the cascade and returns sources plus the
execution trace; GET /health reports readiness and corpus size. Requests
are served concurrently (thread per connection); a failing request
returns a JSON error without taking the service down.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .cascade import CascadeConfig, CascadeTrace, run_cascade
from .corpus import Query
from .workflows import JaccardReranker, Reranker, SearchIndexes

logger = logging.getLogger(__name__)


@dataclass
class AppState:
    indexes: SearchIndexes | None = None
    cascade_config: CascadeConfig = field(default_factory=CascadeConfig)
    reranker: Reranker = field(default_factory=JaccardReranker)
    ready: bool = False
    _query_counter: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def next_query_id(self) -> str:
        with self._lock:
            self._query_counter += 1
            return f"http-{self._query_counter}"


def trace_to_json(trace: CascadeTrace) -> dict:
    return {
        "query_id": trace.query_id,
        "steps": [
            {
                "workflow": s.workflow,
                "has_sources": s.has_sources,
                "doc_count": s.doc_count,
                "step_latency_s": s.step_latency,
            }
            for s in trace.steps
        ],
        "stop_index": trace.stop_index,
        "outcome": trace.outcome,
        "cumulative_latency_s": trace.cumulative_latency,
        "augmentation_used": trace.augmentation_used,
    }


class _Handler(BaseHTTPRequestHandler):
    server: "CascadeServer"

    def log_message(self, fmt: str, *args) -> None:
        logger.debug("%s " + fmt, self.address_string(), *args)

    def _send(self, status: int, payload: dict) -> None:
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self) -> None:
        if self.path != "/health":
            self._send(404, {"error": "not found"})
            return
        state = self.server.state
        if not state.ready or state.indexes is None:
            self._send(503, {"status": "loading"})
            return
        self._send(
            200,
            {"status": "ok", "corpus_size": len(state.indexes.chunk_texts)},
        )

    def do_POST(self) -> None:
        if self.path != "/query":
            self._send(404, {"error": "not found"})
            return
        state = self.server.state
        if not state.ready or state.indexes is None:
            self._send(503, {"error": "indexes loading"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length) or b"{}")
        except (ValueError, json.JSONDecodeError):
            self._send(400, {"error": "invalid JSON body"})
            return
        text = payload.get("text")
        if not isinstance(text, str) or not text.strip():
            self._send(400, {"error": "empty text"})
            return
        query = Query(query_id=state.next_query_id(), text=text)
        try:
            trace, final = run_cascade(
                query, state.cascade_config, state.indexes, state.reranker
            )
        except Exception as exc:  # per-request failures never crash the service
            logger.exception("query failed")
            self._send(500, {"error": str(exc)})
            return
        sources = []
        if final is not None:
            for chunk_id, score in final.docs.items:
                sources.append(
                    {
                        "chunk_id": chunk_id,
                        "title": state.indexes.chunk_titles.get(chunk_id, ""),
                        "score": score,
                    }
                )
        self._send(
            200,
            {
                "outcome": trace.outcome,
                "sources": sources,
                "trace": trace_to_json(trace),
            },
        )


class CascadeServer(ThreadingHTTPServer):
    # non-daemon handler threads: server_close() drains in-flight requests
    daemon_threads = False

    def __init__(self, address: tuple[str, int], state: AppState):
        super().__init__(address, _Handler)
        self.state = state


def create_server(state: AppState, host: str = "127.0.0.1", port: int = 8080) -> CascadeServer:
    return CascadeServer((host, port), state)
