"""HTTP providers speaking a chat-completions-style REST schema.

Endpoints under a configurable base URL:

    POST {base}/chat/completions   {model, messages}          -> choices[0].message.content
    POST {base}/embeddings         {model, input}             -> data[i].embedding
    POST {base}/rerank             {model, query, documents}  -> results[i].relevance_score

Auth is a bearer token read from the environment variable named in config;
the variable name lives in config, never the key itself. Request and
response bodies are logged at debug level with the auth header redacted.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import random
import threading
import time
from typing import Callable, Sequence

import numpy as np
import requests

from ..errors import ConfigError, ProviderAuthError, ProviderError
from .base import (
    ChatClient,
    ChatExchange,
    Embedder,
    ProviderConfig,
    Reranker,
    RerankResult,
    RetryPolicy,
    TransientProviderFailure,
    sniff_image_format,
)

log = logging.getLogger(__name__)

_TRANSIENT_STATUS = {408, 429, 500, 502, 503, 504}


class _HttpProvider:
    def __init__(
        self,
        config: ProviderConfig,
        *,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
        jitter_rng: random.Random | None = None,
    ):
        if not config.base_url:
            raise ConfigError("base_url is required for an HTTP provider")
        self.config = config
        self.last_retries = 0
        self._session = session or requests.Session()
        self._inflight = threading.Semaphore(config.max_concurrent_requests)
        self._retry = RetryPolicy(
            max_retries=config.max_retries,
            rng=jitter_rng or random.Random(),
            sleep=sleep,
        )
        self._api_key = None
        if config.api_key_env:
            key = os.environ.get(config.api_key_env)
            if not key:
                raise ConfigError(
                    f"environment variable {config.api_key_env} is not set"
                )
            self._api_key = key

    def _post(self, path: str, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        url = self.config.base_url.rstrip("/") + path
        log.debug("POST %s body=%s", url, json.dumps(payload)[:2000])

        def attempt() -> dict:
            try:
                with self._inflight:
                    resp = self._session.post(
                        url, json=payload, headers=headers, timeout=self.config.timeout_s
                    )
            except (requests.Timeout, requests.ConnectionError) as exc:
                raise TransientProviderFailure(str(exc)) from exc
            if resp.status_code in (401, 403):
                raise ProviderAuthError(f"{url}: HTTP {resp.status_code}")
            if resp.status_code in _TRANSIENT_STATUS:
                retry_after = None
                header = resp.headers.get("Retry-After")
                if header is not None:
                    try:
                        retry_after = float(header)
                    except ValueError:
                        retry_after = None
                raise TransientProviderFailure(
                    f"{url}: HTTP {resp.status_code}", retry_after=retry_after
                )
            if resp.status_code != 200:
                raise ProviderError(f"{url}: HTTP {resp.status_code}: {resp.text[:500]}")
            try:
                body = resp.json()
            except ValueError as exc:
                raise ProviderError(f"{url}: response is not JSON") from exc
            log.debug("response %s body=%s", url, json.dumps(body)[:2000])
            return body

        result, retries = self._retry.run(attempt)
        self.last_retries = retries
        return result


class HttpChatClient(_HttpProvider, ChatClient):
    """Chat completions, with optional image attachment as a data URL part."""

    def complete(self, prompt: str, *, system: str | None = None, image: bytes | None = None) -> str:
        messages: list[dict] = []
        if system:
            messages.append({"role": "system", "content": system})
        if image is not None:
            fmt = sniff_image_format(image)
            data_url = f"data:image/{fmt};base64," + base64.b64encode(image).decode("ascii")
            content = [
                {"type": "text", "text": prompt},
                {"type": "image_url", "image_url": {"url": data_url}},
            ]
        else:
            content = prompt
        messages.append({"role": "user", "content": content})
        body = self._post("/chat/completions", {"model": self.config.model, "messages": messages})
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError("malformed chat payload: missing choices content") from exc
        if not isinstance(text, str) or not text:
            raise ProviderError("malformed chat payload: empty response text")
        self.last_exchange = ChatExchange(
            system=system,
            user=prompt,
            has_image=image is not None,
            response=text,
            usage=body.get("usage"),
        )
        return text


class HttpEmbedder(_HttpProvider, Embedder):
    """Embedding endpoint client; output rows are re-normalized defensively."""

    def __init__(self, config: ProviderConfig, **kwargs):
        super().__init__(config, **kwargs)
        if config.dim is None:
            raise ConfigError("embedder config requires dim")
        self.dim = config.dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        texts = self._check_inputs(texts)
        body = self._post("/embeddings", {"model": self.config.model, "input": texts})
        try:
            rows = sorted(body["data"], key=lambda item: item["index"])
            matrix = np.asarray([row["embedding"] for row in rows], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderError("malformed embeddings payload") from exc
        if matrix.shape != (len(texts), self.dim):
            raise ProviderError(
                f"embeddings shape {matrix.shape} != ({len(texts)}, {self.dim})"
            )
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        if np.any(norms == 0.0) or not np.all(np.isfinite(matrix)):
            raise ProviderError("embeddings payload contains a zero or non-finite vector")
        return matrix / norms


class HttpReranker(_HttpProvider, Reranker):
    def rerank(self, query: str, docs: Sequence[str]) -> list[RerankResult]:
        docs = list(docs)
        if not docs:
            raise ValueError("rerank requires at least one document")
        body = self._post(
            "/rerank", {"model": self.config.model, "query": query, "documents": docs}
        )
        try:
            results = [
                RerankResult(index=int(r["index"]), score=float(r["relevance_score"]))
                for r in body["results"]
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderError("malformed rerank payload") from exc
        if sorted(r.index for r in results) != list(range(len(docs))):
            raise ProviderError("rerank payload does not score every document exactly once")
        return sorted(results, key=lambda r: r.index)
