"""Provider clients: one abstraction over chat, captioning, embedding, reranking."""

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
from .http import HttpChatClient, HttpEmbedder, HttpReranker
from .mock import (
    FIXED_CLOCK,
    MockCaptioner,
    MockChatClient,
    MockEmbedder,
    MockReranker,
    fixed_clock,
    fnv1a64,
    hash8,
    judge_chunk_useful,
    mock_embedding,
)

__all__ = [
    "ChatClient",
    "ChatExchange",
    "Embedder",
    "ProviderConfig",
    "Reranker",
    "RerankResult",
    "RetryPolicy",
    "TransientProviderFailure",
    "sniff_image_format",
    "HttpChatClient",
    "HttpEmbedder",
    "HttpReranker",
    "FIXED_CLOCK",
    "MockCaptioner",
    "MockChatClient",
    "MockEmbedder",
    "MockReranker",
    "fixed_clock",
    "fnv1a64",
    "hash8",
    "judge_chunk_useful",
    "mock_embedding",
]
