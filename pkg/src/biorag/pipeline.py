"""End-to-end orchestration: caption an image, retrieve context, generate a
structured classification response, plus the two no-retrieval baselines.

Retrieval variants:

  simple-rag    embed the caption, take the top-30 cosine hits
  advanced-rag  generate alternative queries, run MMR per query, pool and
                dedupe, rerank against the original caption, keep the top 10
  naive-llm     caption only, no retrieval
  naive-vlm     image only, no captioning and no retrieval

Batches are resumable (keyed on sample_id plus the config hash recorded in a
run manifest) and isolate per-sample failures instead of dying.
"""

from __future__ import annotations

import json
import hashlib
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

from .errors import BioragError, ConfigError
from .records import dump_line, read_jsonl
from .taxonomy import Classification, Rank, enforce_prefix
from .vectorstore import StoredChunk, VectorStore, normalize

log = logging.getLogger(__name__)

VARIANTS = ("simple-rag", "advanced-rag", "naive-llm", "naive-vlm")

SIMPLE_K = 30
RERANK_TOP = 10


def utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class CaptionRecord:
    sample_id: str
    image: str
    caption: str
    model: str
    created_at: str

    def __post_init__(self) -> None:
        if not self.caption:
            raise ValueError(f"{self.sample_id}: caption must be non-empty")


@dataclass(frozen=True)
class ContextEntry:
    chunk: StoredChunk
    score: float
    query_id: str


@dataclass
class RetrievalContext:
    variant: str
    entries: list[ContextEntry] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def chunk_ids(self) -> list[str]:
        return [e.chunk.chunk_id for e in self.entries]

    def texts(self) -> list[str]:
        return [e.chunk.embedded_text for e in self.entries]


@dataclass
class StructuredResponse:
    classification: Classification
    shared_traits: str
    unique_traits: str
    confidence_commentary: str
    biodiversity_knowledge: str
    raw_text: str
    dropped: list[tuple[Rank, str]] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)


def generate_caption(
    sample_id: str,
    image: bytes,
    image_ref: str,
    captioner,
    prompts,
    clock: Callable[[], str] = utc_now,
    model_id: str = "captioner",
) -> CaptionRecord:
    """One captioning call; the rendered caption prompt is sent verbatim."""
    prompt = prompts.render_caption()
    caption = captioner.complete(prompt, image=image)
    return CaptionRecord(
        sample_id=sample_id,
        image=image_ref,
        caption=caption,
        model=model_id,
        created_at=clock(),
    )


def retrieve_simple(caption: str, store: VectorStore, embedder, k: int = SIMPLE_K) -> RetrievalContext:
    """Top-k cosine retrieval over the caption embedding."""
    context = RetrievalContext(variant="simple")
    if len(store) == 0:
        context.flags.append("empty-store")
        return context
    query = normalize(embedder.embed([caption])[0])
    hits = store.search_topk(query, k=k)
    context.entries = [ContextEntry(h.chunk, h.score, "q0") for h in hits]
    assert len(context.entries) == min(k, len(store))
    return context


def retrieve_advanced(
    caption: str,
    store: VectorStore,
    embedder,
    multiquery_chat,
    reranker,
    prompts,
    n_queries: int = 3,
    mmr_k: int = 10,
    fetch_k: int = 40,
    mmr_lambda: float = 0.5,
    rerank_top: int = RERANK_TOP,
) -> RetrievalContext:
    """Multiquery MMR retrieval pooled, deduped, and reranked to the top few.

    Union order before reranking is (first-seen query index, MMR rank) so the
    reranker always sees candidates in a deterministic order.
    """
    context = RetrievalContext(variant="advanced")
    if len(store) == 0:
        context.flags.append("empty-store")
        return context

    queries = [caption]
    if n_queries > 0:
        try:
            reply = multiquery_chat.complete(prompts.render_multiquery(caption, n_queries))
            alternates = [line.strip() for line in reply.splitlines() if line.strip()]
            if not alternates:
                raise ValueError("no queries in reply")
            queries.extend(alternates[:n_queries])
        except (BioragError, ValueError) as exc:
            log.warning("multiquery generation failed (%s); using original only", exc)
            context.flags.append("multiquery-failed")

    pooled: dict[str, ContextEntry] = {}
    for qi, query_text in enumerate(queries):
        query = normalize(embedder.embed([query_text])[0])
        hits = store.search_mmr(query, k=mmr_k, fetch_k=fetch_k, lam=mmr_lambda)
        for hit in hits:
            if hit.chunk_id not in pooled:
                pooled[hit.chunk_id] = ContextEntry(hit.chunk, hit.score, f"q{qi}")

    candidates = list(pooled.values())
    if not candidates:
        return context
    scores = reranker.rerank(caption, [c.chunk.embedded_text for c in candidates])
    ranked = sorted(
        zip(candidates, scores),
        key=lambda pair: (-pair[1].score, pair[0].chunk.chunk_id),
    )
    context.entries = [
        ContextEntry(entry.chunk, result.score, entry.query_id)
        for entry, result in ranked[:rerank_top]
    ]
    assert len(context.entries) <= rerank_top
    assert len(set(context.chunk_ids())) == len(context.entries)
    return context


_SECTION_LABELS = (
    "CLASSIFICATION",
    "SHARED_TRAITS",
    "UNIQUE_TRAITS",
    "CONFIDENCE_COMMENTARY",
    "BIODIVERSITY_KNOWLEDGE",
)
_SECTION_RE = re.compile(
    r"^\s*\[(" + "|".join(_SECTION_LABELS) + r")\]\s*$", re.MULTILINE
)
_RANK_LINE = re.compile(r"^\s*(Kingdom|Phylum|Class|Order|Family|Genus|Species)\s*:\s*(.+?)\s*$", re.IGNORECASE | re.MULTILINE)

_REPAIR_SUFFIX = (
    "\n\nYour previous reply did not follow the required format. Respond again "
    "using exactly the five bracketed section headers [CLASSIFICATION], "
    "[SHARED_TRAITS], [UNIQUE_TRAITS], [CONFIDENCE_COMMENTARY], "
    "[BIODIVERSITY_KNOWLEDGE], each on its own line, with rank lines like "
    '"Order: Araneae" inside [CLASSIFICATION].'
)


def parse_structured_response(raw: str) -> StructuredResponse:
    """Parse the five labeled sections; raises ValueError when any is missing."""
    found = {}
    matches = list(_SECTION_RE.finditer(raw))
    for i, match in enumerate(matches):
        start = match.end()
        end = matches[i + 1].start() if i + 1 < len(matches) else len(raw)
        found[match.group(1)] = raw[start:end].strip()
    missing = [label for label in _SECTION_LABELS if label not in found]
    if missing:
        raise ValueError(f"missing sections: {', '.join(missing)}")

    by_rank: dict[str, str] = {}
    for rank_label, name in _RANK_LINE.findall(found["CLASSIFICATION"]):
        key = rank_label.capitalize()
        by_rank.setdefault(key, name)
    classification, dropped = enforce_prefix(by_rank)
    return StructuredResponse(
        classification=classification,
        shared_traits=found["SHARED_TRAITS"],
        unique_traits=found["UNIQUE_TRAITS"],
        confidence_commentary=found["CONFIDENCE_COMMENTARY"],
        biodiversity_knowledge=found["BIODIVERSITY_KNOWLEDGE"],
        raw_text=raw,
        dropped=dropped,
    )


def _render_context_block(context: RetrievalContext) -> str:
    blocks = []
    for entry in context.entries:
        meta = entry.chunk.meta
        blocks.append(
            f"[{entry.chunk.chunk_id}] source={meta.source} "
            f"taxon={meta.taxon_name} rank={meta.taxon_rank}\n{entry.chunk.embedded_text}"
        )
    return "\n\n".join(blocks)


def _complete_and_parse(chat, prompt: str, image: bytes | None = None) -> StructuredResponse:
    raw = chat.complete(prompt, image=image)
    try:
        return parse_structured_response(raw)
    except ValueError:
        log.debug("structured reply unparseable; re-asking")
    raw = chat.complete(prompt + _REPAIR_SUFFIX, image=image)
    try:
        return parse_structured_response(raw)
    except ValueError:
        log.warning("structured reply unparseable twice; abstaining")
        response = StructuredResponse(
            classification=Classification(),
            shared_traits="",
            unique_traits="",
            confidence_commentary="",
            biodiversity_knowledge="",
            raw_text=raw,
        )
        response.flags.append("parse-failure")
        return response


def generate_response(caption: str, context: RetrievalContext, chat, prompts) -> StructuredResponse:
    """Classification plus the four text parts, grounded in retrieved context."""
    if not caption:
        raise ValueError("caption must be non-empty")
    prompt = prompts.render_response(caption, _render_context_block(context))
    response = _complete_and_parse(chat, prompt)
    response.flags.extend(context.flags)
    return response


def classify_naive_llm(caption: str, chat, prompts) -> StructuredResponse:
    """Baseline: same response contract from the caption alone, no context."""
    if not caption:
        raise ValueError("caption must be non-empty")
    prompt = prompts.render_response(caption, None)
    return _complete_and_parse(chat, prompt)


def classify_naive_vlm(image: bytes, vision_chat, prompts) -> StructuredResponse:
    """Baseline: one vision call, the image standing in for the caption."""
    prompt = prompts.render_response("", None, vision=True)
    return _complete_and_parse(vision_chat, prompt, image=image)


# -- batch running ------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    sample_id: str
    caption: str | None = None
    image_path: Path | None = None
    image_ref: str | None = None


@dataclass
class BatchOutcome:
    completed: int = 0
    skipped: int = 0
    errors: int = 0


def result_record(sample: Sample, variant: str, caption: str | None,
                  context: RetrievalContext | None, response: StructuredResponse) -> dict:
    record = {
        "sample_id": sample.sample_id,
        "variant": variant,
        "caption": caption,
        "context": [
            {"chunk_id": e.chunk.chunk_id, "score": e.score, "query_id": e.query_id}
            for e in (context.entries if context else [])
        ],
        "classification": response.classification.to_records(),
        "response": {
            "shared_traits": response.shared_traits,
            "unique_traits": response.unique_traits,
            "confidence_commentary": response.confidence_commentary,
            "biodiversity_knowledge": response.biodiversity_knowledge,
        },
        "dropped": [{"rank": r.value, "name": n} for r, n in response.dropped],
        "flags": sorted(set(response.flags) | set(context.flags if context else [])),
        "raw": response.raw_text,
    }
    return record


def load_samples_for_variant(path: Path | str, variant: str) -> list[Sample]:
    """Captions file for caption-driven variants, images manifest for naive-vlm."""
    base = Path(path).resolve().parent
    samples = []
    seen = set()
    for record in read_jsonl(path):
        if "error" in record:
            continue
        sid = str(record["sample_id"])
        if sid in seen:
            raise ConfigError(f"duplicate sample_id in input: {sid}")
        seen.add(sid)
        if variant == "naive-vlm":
            samples.append(
                Sample(
                    sample_id=sid,
                    image_path=_resolve(base, record["image"]),
                    image_ref=str(record["image"]),
                )
            )
        else:
            samples.append(Sample(sample_id=sid, caption=str(record["caption"])))
    return samples


def load_image_manifest(path: Path | str) -> list[Sample]:
    base = Path(path).resolve().parent
    samples = []
    seen = set()
    for record in read_jsonl(path):
        sid = str(record["sample_id"])
        if sid in seen:
            raise ConfigError(f"duplicate sample_id in manifest: {sid}")
        seen.add(sid)
        samples.append(
            Sample(
                sample_id=sid,
                image_path=_resolve(base, record["image"]),
                image_ref=str(record["image"]),
            )
        )
    return samples


def _resolve(base: Path, ref: str) -> Path:
    p = Path(ref)
    return p if p.is_absolute() else base / p


def _read_completed(out_path: Path) -> set[str]:
    if not out_path.exists():
        return set()
    return {str(r["sample_id"]) for r in read_jsonl(out_path)}


def manifest_path(out_path: Path | str) -> Path:
    return Path(str(out_path) + ".manifest.json")


def write_manifest(out_path: Path, manifest: dict) -> None:
    manifest_path(out_path).write_text(
        json.dumps(manifest, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def check_resumable(out_path: Path, manifest: dict) -> None:
    """Refuse to resume over a run produced under different settings."""
    existing_path = manifest_path(out_path)
    if not existing_path.exists():
        if out_path.exists():
            raise ConfigError(
                f"{out_path} exists without a manifest; cannot verify it is resumable"
            )
        return
    existing = json.loads(existing_path.read_text(encoding="utf-8"))
    for key in ("command", "variant", "config_hash", "prompt_hashes", "store_checksum"):
        if existing.get(key) != manifest.get(key):
            raise ConfigError(
                f"cannot resume {out_path}: manifest field {key!r} does not match the "
                "current configuration"
            )


def file_sha256(path: Path | str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def run_batch(
    samples: Sequence[Sample],
    variant: str,
    process: Callable[[Sample], dict],
    out_path: Path | str,
    manifest: dict,
    resume: bool = False,
    max_workers: int = 4,
) -> BatchOutcome:
    """Run one record-per-sample batch with isolation, ordering, and resume.

    Samples run concurrently but records are written in input order, flushed
    as each completes so an interrupt loses nothing already finished. A
    failing sample becomes an error record; the batch continues.
    """
    out_path = Path(out_path)
    if resume:
        check_resumable(out_path, manifest)
        done = _read_completed(out_path)
    else:
        if out_path.exists():
            out_path.unlink()
        done = set()

    outcome = BatchOutcome()
    todo = [s for s in samples if s.sample_id not in done]
    outcome.skipped = len(samples) - len(todo)

    # The manifest goes down before any work so an interrupted run stays
    # resumable; final counts are rewritten at the end.
    manifest = dict(manifest)
    manifest["counts"] = {"samples": len(samples), "completed": outcome.skipped, "errors": 0}
    write_manifest(out_path, manifest)

    mode = "a" if resume and out_path.exists() else "w"
    with open(out_path, mode, encoding="utf-8", newline="\n") as fh:
        with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
            futures = [(s, pool.submit(_guarded, process, s, variant)) for s in todo]
            for sample, future in futures:
                record = future.result()
                fh.write(dump_line(record))
                fh.flush()
                if "error" in record:
                    outcome.errors += 1
                else:
                    outcome.completed += 1

    manifest["counts"] = {
        "samples": len(samples),
        "completed": outcome.completed + outcome.skipped,
        "errors": outcome.errors,
    }
    write_manifest(out_path, manifest)
    return outcome


def _guarded(process: Callable[[Sample], dict], sample: Sample, variant: str) -> dict:
    try:
        return process(sample)
    except (BioragError, ValueError, OSError) as exc:
        log.warning("sample %s failed: %s", sample.sample_id, exc)
        return {"sample_id": sample.sample_id, "variant": variant, "error": str(exc)}
