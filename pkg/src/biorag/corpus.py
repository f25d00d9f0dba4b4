"""Turns encyclopedia documents into filtered, contextualized, token-budgeted chunks.

Flow per document: recursive split under a token budget, a judge call that
keeps only descriptive chunks and supplies situating text, then budget-aware
prepending of that text. Retained chunks carry exactly three metadata fields
(taxon_rank, source, taxon_name) and never exceed the budget.
"""

from __future__ import annotations

import json
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .errors import BioragError
from .records import dump_line, read_jsonl_tolerant
from .taxonomy import Rank

log = logging.getLogger(__name__)

SOURCES = ("Wikipedia", "Wikispecies")
UNRANKED = "unranked"
DEFAULT_TOKEN_BUDGET = 1024

#: Separators tried from coarsest to finest by the recursive splitter.
SEPARATORS = ("\n\n", "\n", " ")

#: Joins contextual text and chunk body in the embedded form; budget
#: accounting charges one token for it (see chunk_token_count).
CONTEXT_SEPARATOR = "\n\n"


class TokenCounter(Protocol):
    """Counts budget tokens in a piece of text."""

    name: str

    def count(self, text: str) -> int: ...


class WhitespaceTokenCounter:
    """Counts whitespace-separated words."""

    name = "whitespace"

    def count(self, text: str) -> int:
        return len(text.split())


class ScaledTokenCounter:
    """Whitespace word count inflated by a fixed factor (rounded up).

    Approximates subword tokenizers, which usually emit more tokens than
    words; 1.3 is a workable default for English prose.
    """

    def __init__(self, factor: float = 1.3):
        if factor <= 0:
            raise ValueError("factor must be positive")
        self.factor = factor
        self.name = f"scaled:{factor}"
        self._base = WhitespaceTokenCounter()

    def count(self, text: str) -> int:
        words = self._base.count(text)
        return 0 if words == 0 else math.ceil(words * self.factor)


def count_tokens(text: str, counter: TokenCounter) -> int:
    return counter.count(text)


@dataclass(frozen=True)
class ChunkMeta:
    """Exactly the three metadata fields stored with every chunk."""

    taxon_rank: str
    source: str
    taxon_name: str

    def as_dict(self) -> dict[str, str]:
        return {
            "taxon_rank": self.taxon_rank,
            "source": self.source,
            "taxon_name": self.taxon_name,
        }


@dataclass(frozen=True)
class SourceDocument:
    doc_id: str
    source: str
    taxon_name: str
    taxon_rank: str
    text: str

    def __post_init__(self) -> None:
        if not self.doc_id.strip():
            raise ValueError("doc_id must be non-empty")
        if self.source not in SOURCES:
            raise ValueError(f"{self.doc_id}: source must be one of {SOURCES}")
        if not self.taxon_name.strip():
            raise ValueError(f"{self.doc_id}: taxon_name must be non-empty")
        if self.taxon_rank != UNRANKED:
            Rank.parse(self.taxon_rank)
        if not self.text.strip():
            raise ValueError(f"{self.doc_id}: text must be non-empty")

    @property
    def meta(self) -> ChunkMeta:
        return ChunkMeta(self.taxon_rank, self.source, self.taxon_name)


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    seq: int
    text: str
    contextual_text: str
    token_count: int
    metadata: ChunkMeta

    @property
    def embedded_text(self) -> str:
        """Contextual text prepended to the chunk body; what gets embedded."""
        if not self.contextual_text:
            return self.text
        return self.contextual_text + CONTEXT_SEPARATOR + self.text


@dataclass(frozen=True)
class FilterDecision:
    useful: bool
    contextual_text: str


def chunk_token_count(contextual_text: str, text: str, counter: TokenCounter) -> int:
    """Token budget charged to a chunk: context + body plus one separator token.

    The separator between contextual text and body is charged as a single
    token whenever contextual text is present.
    """
    body = counter.count(text)
    if not contextual_text:
        return body
    return counter.count(contextual_text) + 1 + body


def make_chunk_id(doc_id: str, seq: int) -> str:
    return f"{doc_id}#{seq:05d}"


def split_text_recursive(
    text: str, max_tokens: int, counter: TokenCounter
) -> tuple[list[str], list[str]]:
    """Split text into in-order pieces of at most max_tokens each.

    Tries blank lines first, then newlines, then single spaces, greedily
    re-packing adjacent pieces at each level. A piece with no remaining
    separator that still exceeds the budget is emitted as-is and reported in
    the warnings list.
    """
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    warnings: list[str] = []

    def rec(segment: str, seps: Sequence[str]) -> list[str]:
        if counter.count(segment) <= max_tokens:
            return [segment] if segment.strip() else []
        for i, sep in enumerate(seps):
            if sep not in segment:
                continue
            parts = [p for p in segment.split(sep) if p.strip()]
            pieces: list[str] = []
            for part in parts:
                pieces.extend(rec(part, seps[i + 1 :]))
            merged: list[str] = []
            for piece in pieces:
                if merged and counter.count(merged[-1] + sep + piece) <= max_tokens:
                    merged[-1] = merged[-1] + sep + piece
                else:
                    merged.append(piece)
            return merged
        warnings.append(
            f"indivisible segment of {counter.count(segment)} tokens "
            f"exceeds budget {max_tokens}"
        )
        return [segment]

    return rec(text, SEPARATORS), warnings


def split_recursive(
    doc: SourceDocument, max_tokens: int, counter: TokenCounter
) -> tuple[list[Chunk], list[str]]:
    """Split one document into budgeted chunks with stable, sortable ids."""
    pieces, warnings = split_text_recursive(doc.text, max_tokens, counter)
    chunks = [
        Chunk(
            chunk_id=make_chunk_id(doc.doc_id, seq),
            doc_id=doc.doc_id,
            seq=seq,
            text=piece,
            contextual_text="",
            token_count=counter.count(piece),
            metadata=doc.meta,
        )
        for seq, piece in enumerate(pieces)
    ]
    warnings = [f"{doc.doc_id}: {w}" for w in warnings]
    return chunks, warnings


def render_doc_content(doc: SourceDocument) -> str:
    """Document block shown to the filter judge, with its known taxonomy."""
    return (
        f"Taxon: {doc.taxon_name} (rank: {doc.taxon_rank})\n"
        f"Source: {doc.source}\n\n"
        f"{doc.text}"
    )


_FENCE = re.compile(r"^```[a-zA-Z]*\n|\n?```$")

_REPAIR_INSTRUCTION = (
    "\n\nYour previous reply could not be parsed. Respond again with ONLY a "
    'JSON object of the form {"useful": true or false, "contextual_text": "..."} '
    "and no other text."
)


def _parse_filter_reply(reply: str) -> FilterDecision:
    body = _FENCE.sub("", reply.strip())
    data = json.loads(body)
    if not isinstance(data, dict):
        raise ValueError("reply is not a JSON object")
    useful = data["useful"]
    contextual = data["contextual_text"]
    if not isinstance(useful, bool) or not isinstance(contextual, str):
        raise ValueError("reply fields have wrong types")
    return FilterDecision(useful=useful, contextual_text=contextual)


def filter_chunk(chunk: Chunk, doc: SourceDocument, judge, prompts) -> FilterDecision:
    """Ask the judge whether a chunk is worth embedding and get situating text.

    One repair re-ask on unparseable output; a second failure fails closed
    (the chunk is marked not useful) so unvetted text is never embedded.
    """
    if not chunk.text.strip():
        return FilterDecision(useful=False, contextual_text="empty")
    prompt = prompts.render_contextualize(render_doc_content(doc), chunk.text)
    reply = judge.complete(prompt)
    try:
        return _parse_filter_reply(reply)
    except (ValueError, KeyError, json.JSONDecodeError):
        log.debug("filter judge reply unparseable for %s; re-asking", chunk.chunk_id)
    reply = judge.complete(prompt + _REPAIR_INSTRUCTION)
    try:
        return _parse_filter_reply(reply)
    except (ValueError, KeyError, json.JSONDecodeError):
        log.warning("filter judge reply unparseable twice for %s", chunk.chunk_id)
        return FilterDecision(useful=False, contextual_text="judge-parse-failure")


def contextualize(
    chunk: Chunk,
    decision: FilterDecision,
    counter: TokenCounter,
    max_tokens: int = DEFAULT_TOKEN_BUDGET,
) -> Chunk:
    """Attach situating text to a useful chunk, truncating it to fit the budget.

    Only the contextual text is ever trimmed (from its end); the chunk body
    the judge saw is preserved untouched.
    """
    if not decision.useful:
        raise ValueError("contextualize requires a useful FilterDecision")
    context_words = decision.contextual_text.split()
    while context_words:
        candidate = " ".join(context_words)
        if chunk_token_count(candidate, chunk.text, counter) <= max_tokens:
            break
        context_words.pop()
    contextual = " ".join(context_words)
    return replace(
        chunk,
        contextual_text=contextual,
        token_count=chunk_token_count(contextual, chunk.text, counter),
    )


@dataclass
class IngestStats:
    documents: int = 0
    produced: int = 0
    filtered: int = 0
    retained: int = 0
    oversized: int = 0
    failures: list[tuple[str, str]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "documents": self.documents,
            "produced": self.produced,
            "filtered": self.filtered,
            "retained": self.retained,
            "oversized": self.oversized,
            "failures": [list(f) for f in self.failures],
            "warnings": list(self.warnings),
        }


def ingest_corpus(
    docs: Iterable[SourceDocument],
    judge,
    counter: TokenCounter,
    prompts,
    max_tokens: int = DEFAULT_TOKEN_BUDGET,
    max_workers: int = 4,
) -> tuple[list[Chunk], IngestStats]:
    """Split, filter, and contextualize a document batch.

    Documents are processed concurrently up to max_workers, but the output is
    canonicalized by (doc_id, seq) so results are order-independent. Failures
    are recorded per document and never abort the batch. Conservation holds
    exactly: produced == retained + filtered.
    """
    docs = list(docs)
    stats = IngestStats()

    def process(doc: SourceDocument) -> tuple[list[Chunk], int, int, int, list[str]]:
        chunks, warnings = split_recursive(doc, max_tokens, counter)
        kept: list[Chunk] = []
        filtered = 0
        oversized = 0
        for chunk in chunks:
            if chunk.token_count > max_tokens:
                filtered += 1
                oversized += 1
                warnings.append(f"{chunk.chunk_id}: dropped oversized chunk")
                continue
            decision = filter_chunk(chunk, doc, judge, prompts)
            if not decision.useful:
                filtered += 1
                continue
            kept.append(contextualize(chunk, decision, counter, max_tokens))
        return kept, len(chunks), filtered, oversized, warnings

    results: dict[str, tuple[list[Chunk], int, int, int, list[str]]] = {}
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        futures = {doc.doc_id: pool.submit(process, doc) for doc in docs}
        for doc in docs:
            stats.documents += 1
            try:
                results[doc.doc_id] = futures[doc.doc_id].result()
            except (BioragError, ValueError, OSError) as exc:
                stats.failures.append((doc.doc_id, str(exc)))

    retained: list[Chunk] = []
    for doc in docs:
        if doc.doc_id not in results:
            continue
        kept, produced, filtered, oversized, warnings = results[doc.doc_id]
        stats.produced += produced
        stats.filtered += filtered
        stats.oversized += oversized
        stats.retained += len(kept)
        stats.warnings.extend(warnings)
        retained.extend(kept)

    retained.sort(key=lambda c: (c.doc_id, c.seq))
    assert stats.produced == stats.retained + stats.filtered
    return retained, stats


def document_from_record(record: dict) -> SourceDocument:
    return SourceDocument(
        doc_id=str(record["doc_id"]),
        source=str(record["source"]),
        taxon_name=str(record["taxon_name"]),
        taxon_rank=str(record["taxon_rank"]),
        text=str(record["text"]),
    )


def load_documents(path: Path | str) -> tuple[list[SourceDocument], list[str]]:
    """Read a line-delimited corpus file; bad lines become recorded errors."""
    docs: list[SourceDocument] = []
    errors: list[str] = []
    seen: set[str] = set()
    records, parse_errors = read_jsonl_tolerant(path)
    errors.extend(parse_errors)
    for lineno, record in records:
        try:
            doc = document_from_record(record)
        except (KeyError, ValueError) as exc:
            errors.append(f"line {lineno}: {exc}")
            continue
        if doc.doc_id in seen:
            errors.append(f"line {lineno}: duplicate doc_id {doc.doc_id!r}")
            continue
        seen.add(doc.doc_id)
        docs.append(doc)
    return docs, errors


def chunk_to_record(chunk: Chunk) -> dict:
    return {
        "chunk_id": chunk.chunk_id,
        "doc_id": chunk.doc_id,
        "seq": chunk.seq,
        "text": chunk.text,
        "contextual_text": chunk.contextual_text,
        "token_count": chunk.token_count,
        "metadata": chunk.metadata.as_dict(),
    }


def chunk_from_record(record: dict) -> Chunk:
    meta = record["metadata"]
    return Chunk(
        chunk_id=str(record["chunk_id"]),
        doc_id=str(record["doc_id"]),
        seq=int(record["seq"]),
        text=str(record["text"]),
        contextual_text=str(record["contextual_text"]),
        token_count=int(record["token_count"]),
        metadata=ChunkMeta(
            taxon_rank=str(meta["taxon_rank"]),
            source=str(meta["source"]),
            taxon_name=str(meta["taxon_name"]),
        ),
    )


def write_chunks(path: Path | str, chunks: Iterable[Chunk]) -> int:
    """Write chunks as UTF-8, LF-terminated, line-delimited records."""
    ordered = sorted(chunks, key=lambda c: (c.doc_id, c.seq))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for chunk in ordered:
            fh.write(dump_line(chunk_to_record(chunk)))
    return len(ordered)


def read_chunks(path: Path | str) -> list[Chunk]:
    records, errors = read_jsonl_tolerant(path)
    if errors:
        raise BioragError(f"unreadable chunk file {path}: {errors[0]}")
    return [chunk_from_record(record) for _, record in records]
