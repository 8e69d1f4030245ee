"""Minimal HTTP clients for the embedder, LLM transformer, and judge endpoints.

All three speak JSON-over-POST. Transient transport failures are retried a
bounded number of times; retries are safe because every request is a pure
function of its payload.
"""

from __future__ import annotations

import json
import urllib.error
import urllib.request


class EndpointError(Exception):
    """Transport failure or non-conforming response from an external endpoint."""


def post_json(
    url: str, payload: dict, timeout: float = 10.0, retries: int = 2
) -> dict:
    data = json.dumps(payload).encode("utf-8")
    req = urllib.request.Request(
        url, data=data, headers={"Content-Type": "application/json"}
    )
    last_exc: Exception | None = None
    for _attempt in range(retries + 1):
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                body = resp.read().decode("utf-8")
            return json.loads(body)
        except (urllib.error.URLError, TimeoutError, json.JSONDecodeError) as exc:
            last_exc = exc
    raise EndpointError(f"endpoint {url} failed after {retries + 1} attempts: {last_exc}")


def chat_complete(
    endpoint: str,
    model: str,
    prompt: str,
    temperature: float = 0.0,
    max_tokens: int = 4096,
    timeout: float = 30.0,
    retries: int = 2,
) -> str:
    """Call a chat-completion endpoint and return the first message content."""
    payload = {
        "model": model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": temperature,
        "max_tokens": max_tokens,
    }
    resp = post_json(endpoint, payload, timeout=timeout, retries=retries)
    try:
        return resp["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise EndpointError(f"non-conforming chat response: {resp!r}") from exc


def embed_remote(
    endpoint: str,
    model: str,
    text: str,
    timeout: float = 10.0,
    retries: int = 2,
) -> list[float]:
    """Call an embeddings endpoint: {model, input: [text]} -> one vector."""
    resp = post_json(
        endpoint, {"model": model, "input": [text]}, timeout=timeout, retries=retries
    )
    try:
        vector = resp["data"][0]["embedding"]
    except (KeyError, IndexError, TypeError) as exc:
        raise EndpointError(f"non-conforming embedding response: {resp!r}") from exc
    if not isinstance(vector, list) or not vector:
        raise EndpointError(f"non-conforming embedding payload: {vector!r}")
    return [float(x) for x in vector]
