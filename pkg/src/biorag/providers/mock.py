"""Deterministic offline providers.

Every mock is a pure function of its inputs, so two pipeline runs over the
same inputs produce byte-identical artifacts. The building blocks are fixed
and portable on purpose:

  * text/bytes hashing: 64-bit FNV-1a
  * pseudo-randomness:  xorshift64* seeded by the FNV-1a hash
  * embeddings:         dim draws in [-1, 1) from xorshift64*, L2-normalized
  * captions:           "MOCKCAP:" + first 8 hex chars of the image-bytes hash
  * reranking:          cosine of the mock embeddings of query and document

The mock chat client recognizes each pipeline prompt by its fixed markers
and answers per stage-specific rules:

  * filter judge:  not useful iff the chunk text, case-folded, starts with
    "references", "citation" or "external links", or has fewer than 5
    whitespace tokens; useful chunks get "ctx: <taxon_name> (<taxon_rank>)"
  * multiquery:    the original query with " [variant i]" suffixes
  * responder:     a fixed well-formed five-section reply keyed on the
    prompt hash
  * claim split:   the answer's sentences, one per line
  * claim support: SUPPORTED iff the claim, case-folded and whitespace-
    collapsed, is a substring of some context
  * questions:     the answer's first n sentences prefixed "Q: "

Anything unrecognized echoes "MOCKCHAT:" + prompt hash.
"""

from __future__ import annotations

import re
from typing import Sequence

import numpy as np

from ..textutil import collapse_ws, split_sentences
from .base import ChatClient, ChatExchange, Embedder, Reranker, RerankResult, sniff_image_format

MASK64 = (1 << 64) - 1
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3

#: Fixed timestamp used instead of the wall clock in deterministic runs.
FIXED_CLOCK = "1970-01-01T00:00:00Z"


def fixed_clock() -> str:
    return FIXED_CLOCK


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def hash8(data: bytes) -> str:
    """First 8 hex chars of the 16-digit FNV-1a hash."""
    return format(fnv1a64(data), "016x")[:8]


class XorShift64Star:
    """xorshift64* generator; state must be nonzero."""

    def __init__(self, seed: int):
        self._state = seed & MASK64 or FNV_OFFSET

    def next_u64(self) -> int:
        s = self._state
        s ^= (s >> 12)
        s = (s ^ (s << 25)) & MASK64
        s ^= (s >> 27)
        self._state = s
        return (s * 0x2545F4914F6CDD1D) & MASK64

    def next_unit(self) -> float:
        """One draw in [-1, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) / float(1 << 53) * 2.0 - 1.0


def mock_embedding(text: str, dim: int) -> np.ndarray:
    """Unit-norm float64 vector derived only from the text bytes."""
    rng = XorShift64Star(fnv1a64(text.encode("utf-8")))
    values = np.array([rng.next_unit() for _ in range(dim)], dtype=np.float64)
    norm = float(np.linalg.norm(values))
    if norm == 0.0:
        raise ValueError("degenerate mock embedding")
    return values / norm


class MockEmbedder(Embedder):
    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        texts = self._check_inputs(texts)
        return np.stack([mock_embedding(text, self.dim) for text in texts])


class MockReranker(Reranker):
    """Scores documents by cosine similarity of mock embeddings."""

    def __init__(self, dim: int = 256):
        self.dim = dim

    def rerank(self, query: str, docs: Sequence[str]) -> list[RerankResult]:
        docs = list(docs)
        if not docs:
            raise ValueError("rerank requires at least one document")
        q = mock_embedding(query, self.dim)
        return [
            RerankResult(index=i, score=float(q @ mock_embedding(doc, self.dim)))
            for i, doc in enumerate(docs)
        ]


class MockCaptioner(ChatClient):
    """Vision captioner stand-in; the caption is a pure function of the image."""

    def complete(self, prompt: str, *, system: str | None = None, image: bytes | None = None) -> str:
        if image is None:
            raise ValueError("mock captioner requires an image")
        sniff_image_format(image)
        caption = "MOCKCAP:" + hash8(image)
        self.last_exchange = ChatExchange(
            system=system, user=prompt, has_image=True, response=caption
        )
        return caption


_FILTER_PREFIXES = ("references", "citation", "external links")
_MIN_USEFUL_TOKENS = 5

_TAXON_LINE = re.compile(r"Taxon: (.+) \(rank: (.+)\)")
_CHUNK_BLOCK = re.compile(r"<chunk>\n(.*?)\n</chunk>", re.DOTALL)
_QUERY_BLOCK = re.compile(r"<query>\n(.*?)\n</query>", re.DOTALL)
_ANSWER_BLOCK = re.compile(r"<answer>\n(.*?)\n</answer>", re.DOTALL)
_CLAIMS_BLOCK = re.compile(r"<claims>\n(.*?)\n</claims>", re.DOTALL)
_CONTEXT_BLOCKS = re.compile(r"<context>\n(.*?)\n</context>", re.DOTALL)
_COUNT_PHRASE = re.compile(r"Generate (\d+)")
_CLAIM_LINE = re.compile(r"^\d+\.\s*(.*)$")


def judge_chunk_useful(chunk_text: str) -> bool:
    """The normative mock filter heuristic."""
    folded = chunk_text.casefold().lstrip()
    if any(folded.startswith(prefix) for prefix in _FILTER_PREFIXES):
        return False
    return len(chunk_text.split()) >= _MIN_USEFUL_TOKENS


def _filter_reply(prompt: str) -> str:
    chunk_match = _CHUNK_BLOCK.search(prompt)
    chunk_text = chunk_match.group(1) if chunk_match else ""
    if judge_chunk_useful(chunk_text):
        taxon = _TAXON_LINE.search(prompt)
        name, rank = (taxon.group(1), taxon.group(2)) if taxon else ("unknown", "unranked")
        return '{"useful": true, "contextual_text": "ctx: ' + name + " (" + rank + ')"}'
    folded = chunk_text.casefold().lstrip()
    reason = "references header" if any(
        folded.startswith(p) for p in _FILTER_PREFIXES
    ) else "too short"
    return '{"useful": false, "contextual_text": "' + reason + '"}'


def _multiquery_reply(prompt: str) -> str:
    query = _QUERY_BLOCK.search(prompt).group(1)
    n = int(_COUNT_PHRASE.search(prompt).group(1))
    return "\n".join(f"{query} [variant {i}]" for i in range(1, n + 1))


def _response_reply(prompt: str) -> str:
    tag = hash8(prompt.encode("utf-8"))
    return (
        "[CLASSIFICATION]\n"
        "Kingdom: Animalia\n"
        "Phylum: Arthropoda\n"
        "Class: Insecta\n"
        "Order: Diptera\n"
        "[SHARED_TRAITS]\n"
        f"Mock shared traits ({tag}). The organism and the context organisms share jointed legs.\n"
        "[UNIQUE_TRAITS]\n"
        f"Mock unique traits ({tag}). Wing venation appears distinctive.\n"
        "[CONFIDENCE_COMMENTARY]\n"
        f"Mock confidence commentary ({tag}). Confident to order level only.\n"
        "[BIODIVERSITY_KNOWLEDGE]\n"
        f"Mock biodiversity knowledge ({tag}). Flies of this order occupy varied habitats. "
        "They pollinate many plants."
    )


def _claims_reply(prompt: str) -> str:
    answer = _ANSWER_BLOCK.search(prompt).group(1)
    return "\n".join(split_sentences(answer))


def _support_reply(prompt: str) -> str:
    claims_block = _CLAIMS_BLOCK.search(prompt).group(1)
    contexts = [collapse_ws(c).casefold() for c in _CONTEXT_BLOCKS.findall(prompt)]
    verdicts = []
    for line in claims_block.splitlines():
        match = _CLAIM_LINE.match(line.strip())
        if not match:
            continue
        claim = collapse_ws(match.group(1)).casefold()
        supported = any(claim in context for context in contexts)
        verdicts.append("SUPPORTED" if supported else "UNSUPPORTED")
    return "\n".join(verdicts)


def _questions_reply(prompt: str) -> str:
    answer = _ANSWER_BLOCK.search(prompt).group(1)
    n = int(_COUNT_PHRASE.search(prompt).group(1))
    sentences = split_sentences(answer)[:n]
    return "\n".join(f"Q: {s}" for s in sentences)


class MockChatClient(ChatClient):
    """Recognizes each pipeline prompt and answers it deterministically."""

    def complete(self, prompt: str, *, system: str | None = None, image: bytes | None = None) -> str:
        if image is not None:
            sniff_image_format(image)
        if "<chunk>" in prompt:
            reply = _filter_reply(prompt)
        elif "alternative search queries" in prompt:
            reply = _multiquery_reply(prompt)
        elif "[CLASSIFICATION]" in prompt:
            reply = _response_reply(prompt)
        elif "individual factual claims" in prompt:
            reply = _claims_reply(prompt)
        elif "SUPPORTED or UNSUPPORTED" in prompt:
            reply = _support_reply(prompt)
        elif "artificial questions" in prompt:
            reply = _questions_reply(prompt)
        else:
            reply = "MOCKCHAT:" + hash8(prompt.encode("utf-8"))
        self.last_exchange = ChatExchange(
            system=system, user=prompt, has_image=image is not None, response=reply
        )
        return reply
