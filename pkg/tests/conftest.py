"""Shared test fixtures: a controlled mini-corpus plus a mock LLM endpoint."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from rag_cascade.corpus import Chunk
from rag_cascade.dense import EmbedderSpec
from rag_cascade.workflows import build_search_indexes

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def make_chunk(chunk_id: str, text: str, doc_id: str = "d1", ordinal: int = 0) -> Chunk:
    from rag_cascade.corpus import tokenize

    return Chunk(
        chunk_id=chunk_id,
        parent_doc_id=doc_id,
        text=text,
        ordinal=ordinal,
        token_count=len(tokenize(text)),
    )


MINI_TEXTS = {
    "c1": "møllebyggeri er et vigtigt håndværk med vand og vind i landskabet",
    "c2": "stenkunst og ristninger findes på sten ved kysten og i landskabet",
    "c3": "fjordforskning undersøger vandmiljø og strømme i fjorden nær kysten",
    "c4": "kysthandel med salt og sild forbandt havne gennem perioden",
    "c5": "lyngheden og hedelandskabet plejes gennem afbrænding og græsning",
}


@pytest.fixture(scope="session")
def mini_chunks() -> list[Chunk]:
    return [make_chunk(cid, text, doc_id=f"doc-{cid}") for cid, text in MINI_TEXTS.items()]


@pytest.fixture(scope="session")
def mini_indexes(mini_chunks):
    return build_search_indexes(
        mini_chunks,
        EmbedderSpec(dimension=256),
        {f"doc-{cid}": cid.upper() for cid in MINI_TEXTS},
    )


class MockLLMHandler(BaseHTTPRequestHandler):
    def log_message(self, *args) -> None:
        pass

    def _read_json(self) -> dict:
        length = int(self.headers.get("Content-Length", "0"))
        return json.loads(self.rfile.read(length))

    def _reply(self, status: int, payload: dict | str) -> None:
        body = (
            payload.encode("utf-8")
            if isinstance(payload, str)
            else json.dumps(payload).encode("utf-8")
        )
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self) -> None:
        server: MockLLMServer = self.server  # type: ignore[assignment]
        with server.lock:
            server.requests.append(self.path)
            if server.fail_next > 0:
                server.fail_next -= 1
                self._reply(500, {"error": "transient"})
                return
        payload = self._read_json()
        if self.path == "/chat":
            prompt = payload["messages"][0]["content"]
            content = server.chat_fn(prompt)
            self._reply(200, {"choices": [{"message": {"content": content}}]})
        elif self.path == "/embed":
            text = payload["input"][0]
            vector = server.embed_fn(text)
            self._reply(200, {"data": [{"embedding": vector}]})
        elif self.path == "/broken":
            self._reply(200, {"unexpected": "shape"})
        else:
            self._reply(404, {"error": "unknown path"})


class MockLLMServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self):
        super().__init__(("127.0.0.1", 0), MockLLMHandler)
        self.lock = threading.Lock()
        self.requests: list[str] = []
        self.fail_next = 0
        self.chat_fn = lambda prompt: "ekko"
        self.embed_fn = lambda text: [1.0, 0.0, 0.0, 0.0]

    def url(self, path: str) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}{path}"


@pytest.fixture()
def llm_server():
    server = MockLLMServer()
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
    server.server_close()
