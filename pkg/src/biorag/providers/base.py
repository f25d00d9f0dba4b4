"""Provider abstractions: chat (optionally with an image), embeddings, reranking.

Real providers speak a chat-completions-style REST schema rooted at a
configurable base URL; the mock implementations in .mock are pure functions
of their inputs so whole pipeline runs are reproducible offline.
"""

from __future__ import annotations

import abc
import logging
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import ConfigError, ProviderError

log = logging.getLogger(__name__)

BACKOFF_BASE_S = 1.0
BACKOFF_FACTOR = 2.0
BACKOFF_JITTER_FRACTION = 0.1


@dataclass
class ProviderConfig:
    """Connection settings for one provider stage."""

    base_url: str = ""
    model: str = ""
    api_key_env: str | None = None
    timeout_s: float = 60.0
    max_retries: int = 3
    max_concurrent_requests: int = 4
    dim: int | None = None
    mock: bool = False

    def __post_init__(self) -> None:
        if self.timeout_s <= 0:
            raise ConfigError("timeout_s must be positive")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.max_concurrent_requests < 1:
            raise ConfigError("max_concurrent_requests must be >= 1")

    def describe(self) -> dict[str, str]:
        if self.mock:
            return {"kind": "mock"}
        return {"kind": "http", "base_url": self.base_url, "model": self.model}


@dataclass
class ChatExchange:
    """One completed chat call, kept for debugging and usage accounting."""

    system: str | None
    user: str
    has_image: bool
    response: str
    usage: dict | None = None


@dataclass(frozen=True)
class RerankResult:
    index: int
    score: float


class ChatClient(abc.ABC):
    """Text completion, optionally with one image attachment."""

    last_exchange: ChatExchange | None = None
    last_retries: int = 0

    @abc.abstractmethod
    def complete(self, prompt: str, *, system: str | None = None, image: bytes | None = None) -> str: ...


class Embedder(abc.ABC):
    """Maps texts to unit-norm vectors; same text, same vector."""

    dim: int

    @abc.abstractmethod
    def embed(self, texts: Sequence[str]) -> np.ndarray: ...

    def _check_inputs(self, texts: Sequence[str]) -> list[str]:
        texts = list(texts)
        if not texts:
            raise ValueError("embed requires at least one text")
        for i, text in enumerate(texts):
            if not text.strip():
                raise ValueError(f"embed input {i} is empty")
        return texts


class Reranker(abc.ABC):
    """Scores each document's relevance to a query; one score per document."""

    @abc.abstractmethod
    def rerank(self, query: str, docs: Sequence[str]) -> list[RerankResult]: ...


class TransientProviderFailure(Exception):
    """Internal marker for retryable failures; carries server backoff advice."""

    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


@dataclass
class RetryPolicy:
    """Exponential backoff (base 1s, factor 2) with bounded additive jitter.

    Honors server-provided retry-after delays. Jitter comes from the given
    RNG so runs seeded identically back off identically.
    """

    max_retries: int = 3
    rng: random.Random = field(default_factory=random.Random)
    sleep: Callable[[float], None] = time.sleep

    def run(self, op: Callable[[], "object"]) -> tuple["object", int]:
        """Returns (result, retries used); raises ProviderError when exhausted."""
        for attempt in range(self.max_retries + 1):
            try:
                return op(), attempt
            except TransientProviderFailure as exc:
                if attempt == self.max_retries:
                    raise ProviderError(
                        f"giving up after {attempt} retries: {exc}"
                    ) from exc
                delay = BACKOFF_BASE_S * BACKOFF_FACTOR**attempt
                delay += self.rng.uniform(0.0, BACKOFF_JITTER_FRACTION * delay)
                if exc.retry_after is not None:
                    delay = exc.retry_after
                log.debug("transient provider failure (%s); retrying in %.2fs", exc, delay)
                self.sleep(delay)
        raise AssertionError("unreachable")


def sniff_image_format(data: bytes) -> str:
    """Returns 'png' or 'jpeg'; raises ValueError for anything else."""
    if not data:
        raise ValueError("image is empty")
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return "png"
    if data[:3] == b"\xff\xd8\xff":
        return "jpeg"
    raise ValueError("image is not a decodable PNG or JPEG")
