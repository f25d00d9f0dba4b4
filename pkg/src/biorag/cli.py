"""Command-line entry point.

Subcommands wire the pipeline into reproducible batch runs:

    biorag ingest   --config C --corpus IN.jsonl --out CHUNKS.jsonl
    biorag embed    --config C --chunks CHUNKS.jsonl
    biorag caption  --config C --images MANIFEST.jsonl --out CAPTIONS.jsonl
    biorag classify --config C --variant V --input IN.jsonl --out RESULTS.jsonl
    biorag evaluate --config C --results R.jsonl [R2.jsonl ...] --mode M --out DIR

Exit codes: 0 success, 1 usage or config error, 2 partial failure,
3 fatal runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as config_mod
from . import corpus as corpus_mod
from . import evaluate as eval_mod
from . import pipeline as pipe
from .errors import BioragError, ConfigError
from .records import read_jsonl
from .taxonomy import Classification, GroundTruthLabel
from .vectorstore import StoredChunk, VectorStore, normalize

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARTIAL = 2
EXIT_FATAL = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: D102 - argparse hook
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="biorag", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--mock", action="store_true", help="force mock providers")
        p.add_argument("--verbose", action="store_true", help="debug logging")

    p = sub.add_parser("ingest", help="split, filter, and contextualize a corpus")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("embed", help="embed retained chunks into the vector store")
    common(p)
    p.add_argument("--chunks", required=True)

    p = sub.add_parser("caption", help="caption an image batch")
    common(p)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("classify", help="run a classification variant over a batch")
    common(p)
    p.add_argument("--variant", required=True, choices=pipe.VARIANTS)
    p.add_argument("--input", required=True,
                   help="captions file, or an images manifest for naive-vlm")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("evaluate", help="compute metric reports from results")
    common(p)
    p.add_argument("--results", required=True, nargs="+")
    p.add_argument("--labels", help="ground-truth labels (classification modes)")
    p.add_argument("--mode", required=True, choices=("classification", "rag", "both"))
    p.add_argument("--out", required=True, help="report output directory")
    return parser


def cmd_ingest(args, cfg: config_mod.PipelineConfig) -> int:
    corpus_path = Path(args.corpus)
    if not corpus_path.is_file():
        raise ConfigError(f"corpus file not found: {corpus_path}")
    providers = config_mod.build_providers(cfg, force_mock=args.mock)
    prompts = cfg.prompt_library()
    counter = cfg.token_counter()

    docs, doc_errors = corpus_mod.load_documents(corpus_path)
    chunks, stats = corpus_mod.ingest_corpus(
        docs,
        providers.filter_judge,
        counter,
        prompts,
        max_tokens=cfg.token_budget,
        max_workers=cfg.max_concurrent_requests,
    )
    corpus_mod.write_chunks(args.out, chunks)

    for err in doc_errors:
        stats.failures.append(("<input>", err))
    print(
        f"documents={stats.documents} produced={stats.produced} "
        f"filtered={stats.filtered} retained={stats.retained}"
    )
    if not docs:
        print("warning: corpus file contained no documents", file=sys.stderr)
    for doc_id, message in stats.failures:
        print(f"failure {doc_id}: {message}", file=sys.stderr)
    return EXIT_PARTIAL if stats.failures else EXIT_OK


def cmd_embed(args, cfg: config_mod.PipelineConfig) -> int:
    chunks_path = Path(args.chunks)
    if not chunks_path.is_file():
        raise ConfigError(f"chunks file not found: {chunks_path}")
    providers = config_mod.build_providers(cfg, force_mock=args.mock)
    chunks = corpus_mod.read_chunks(chunks_path)
    for chunk in chunks:
        if chunk.token_count > cfg.token_budget:
            raise ConfigError(
                f"chunk {chunk.chunk_id} exceeds the token budget "
                f"({chunk.token_count} > {cfg.token_budget}); refusing to embed"
            )

    if cfg.store_path.exists():
        store = VectorStore.load(cfg.store_path)
        if store.dim != cfg.store_dim:
            raise ConfigError(
                f"existing store dim {store.dim} != configured dim {cfg.store_dim}"
            )
    else:
        store = VectorStore(dim=cfg.store_dim)

    items = []
    batch = 64
    for start in range(0, len(chunks), batch):
        group = chunks[start : start + batch]
        vectors = providers.embedder.embed([c.embedded_text for c in group])
        items.extend(
            StoredChunk.from_chunk(c, normalize(v)) for c, v in zip(group, vectors)
        )
    count = store.upsert(items) if items else len(store)
    cfg.store_path.parent.mkdir(parents=True, exist_ok=True)
    store.persist(cfg.store_path)
    print(f"store={cfg.store_path} count={count}")
    return EXIT_OK


def cmd_caption(args, cfg: config_mod.PipelineConfig) -> int:
    images_path = Path(args.images)
    if not images_path.is_file():
        raise ConfigError(f"images manifest not found: {images_path}")
    providers = config_mod.build_providers(cfg, force_mock=args.mock)
    prompts = cfg.prompt_library()
    samples = pipe.load_image_manifest(images_path)

    def process(sample: pipe.Sample) -> dict:
        image = sample.image_path.read_bytes()
        record = pipe.generate_caption(
            sample.sample_id,
            image,
            sample.image_ref or str(sample.image_path),
            providers.captioner,
            prompts,
            clock=providers.clock,
            model_id=providers.descriptors["captioner"].get("model", "mock"),
        )
        return {
            "sample_id": record.sample_id,
            "image": record.image,
            "caption": record.caption,
            "model": record.model,
            "created_at": record.created_at,
        }

    manifest = {
        "command": "caption",
        "variant": "caption",
        "config_hash": cfg.config_hash,
        "prompt_hashes": prompts.hashes(),
        "providers": providers.descriptors,
        "store_checksum": None,
    }
    outcome = pipe.run_batch(
        samples, "caption", process, args.out, manifest,
        resume=args.resume, max_workers=cfg.max_concurrent_requests,
    )
    print(f"captions={outcome.completed + outcome.skipped} errors={outcome.errors}")
    return EXIT_PARTIAL if outcome.errors else EXIT_OK


def cmd_classify(args, cfg: config_mod.PipelineConfig) -> int:
    input_path = Path(args.input)
    if not input_path.is_file():
        raise ConfigError(f"input file not found: {input_path}")
    variant = args.variant
    needs_store = variant in ("simple-rag", "advanced-rag")
    store = None
    store_checksum = None
    if needs_store:
        if not cfg.store_path.is_file():
            raise ConfigError(f"{variant} requires a store at {cfg.store_path}")
        store = VectorStore.load(cfg.store_path)
        store_checksum = pipe.file_sha256(cfg.store_path)

    providers = config_mod.build_providers(cfg, force_mock=args.mock)
    prompts = cfg.prompt_library()
    samples = pipe.load_samples_for_variant(input_path, variant)
    params = cfg.retrieval

    def process(sample: pipe.Sample) -> dict:
        if variant == "naive-vlm":
            image = sample.image_path.read_bytes()
            response = pipe.classify_naive_vlm(image, providers.responder, prompts)
            return pipe.result_record(sample, variant, None, None, response)
        caption = sample.caption or ""
        if variant == "naive-llm":
            response = pipe.classify_naive_llm(caption, providers.responder, prompts)
            return pipe.result_record(sample, variant, caption, None, response)
        if variant == "simple-rag":
            context = pipe.retrieve_simple(caption, store, providers.embedder, k=params.k)
        else:
            context = pipe.retrieve_advanced(
                caption, store, providers.embedder, providers.multiquery,
                providers.reranker, prompts,
                n_queries=params.n_queries, mmr_k=params.mmr_k,
                fetch_k=params.fetch_k, mmr_lambda=params.mmr_lambda,
                rerank_top=params.rerank_top,
            )
        response = pipe.generate_response(caption, context, providers.responder, prompts)
        return pipe.result_record(sample, variant, caption, context, response)

    manifest = {
        "command": "classify",
        "variant": variant,
        "config_hash": cfg.config_hash,
        "prompt_hashes": prompts.hashes(),
        "providers": providers.descriptors,
        "store_checksum": store_checksum,
    }
    outcome = pipe.run_batch(
        samples, variant, process, args.out, manifest,
        resume=args.resume, max_workers=cfg.max_concurrent_requests,
    )
    print(
        f"variant={variant} results={outcome.completed + outcome.skipped} "
        f"errors={outcome.errors}"
    )
    return EXIT_PARTIAL if outcome.errors else EXIT_OK


def _load_labels(path: Path) -> dict[str, GroundTruthLabel]:
    labels = {}
    for record in read_jsonl(path):
        label = GroundTruthLabel.from_record(record)
        labels[label.sample_id] = label
    return labels


def cmd_evaluate(args, cfg: config_mod.PipelineConfig) -> int:
    mode = args.mode
    out_dir = Path(args.out)
    result_records: dict[str, list[dict]] = {}
    for results_path in args.results:
        path = Path(results_path)
        if not path.is_file():
            raise ConfigError(f"results file not found: {path}")
        for record in read_jsonl(path):
            result_records.setdefault(str(record["variant"]), []).append(record)

    partial = False
    error_ids = [
        r["sample_id"] for records in result_records.values() for r in records if "error" in r
    ]
    if error_ids:
        print(f"skipping {len(error_ids)} error records: {sorted(error_ids)}", file=sys.stderr)

    if mode in ("classification", "both"):
        if not args.labels:
            raise ConfigError("--labels is required for classification evaluation")
        labels = _load_labels(Path(args.labels))
        metrics_by_variant = {}
        split_sources: list[GroundTruthLabel] = []
        for variant, records in sorted(result_records.items()):
            results = []
            unjoined = []
            for record in records:
                if "error" in record:
                    continue
                sid = str(record["sample_id"])
                if sid not in labels:
                    unjoined.append(sid)
                    continue
                predicted = Classification.from_records(record.get("classification", []))
                results.append(
                    eval_mod.ClassificationResult(
                        sample_id=sid, predicted=predicted, truth=labels[sid]
                    )
                )
            if unjoined:
                partial = True
                print(
                    f"{variant}: no label for {len(unjoined)} ids: {sorted(unjoined)}",
                    file=sys.stderr,
                )
            if results:
                metrics_by_variant[variant] = eval_mod.all_rank_metrics(results)
                split_sources.extend(r.truth for r in results)
        if metrics_by_variant:
            csv_path, txt_path = eval_mod.write_classification_report(
                metrics_by_variant, out_dir
            )
            print(f"wrote {csv_path}")
            print(f"wrote {txt_path}")
        split = eval_mod.split_rare_common({t.sample_id: t for t in split_sources}.values())
        if split.rare or split.common:
            _write_split_report(result_records, labels, split, out_dir)

    if mode in ("rag", "both"):
        providers = config_mod.build_providers(cfg, force_mock=args.mock)
        prompts = cfg.prompt_library()
        store = VectorStore.load(cfg.store_path) if cfg.store_path.is_file() else None
        scores_by_variant: dict[str, list[eval_mod.RagScores]] = {}
        for variant, records in sorted(result_records.items()):
            scores = []
            for record in records:
                if "error" in record:
                    continue
                score = _rag_score_record(record, store, providers, prompts)
                if score is not None:
                    scores.append(score)
            if scores:
                scores_by_variant[variant] = scores
        if scores_by_variant:
            scores_path, summary_path = eval_mod.write_rag_report(scores_by_variant, out_dir)
            eval_mod.write_rag_scores_jsonl(scores_by_variant, out_dir)
            print(f"wrote {scores_path}")
            print(f"wrote {summary_path}")

    if error_ids:
        partial = True
    return EXIT_PARTIAL if partial else EXIT_OK


def _rag_score_record(record, store, providers, prompts) -> "eval_mod.RagScores | None":
    answer = record.get("response", {}).get("biodiversity_knowledge", "")
    sid = str(record["sample_id"])
    if not answer.strip():
        return None
    contexts = []
    for entry in record.get("context", []):
        chunk = store.get(entry["chunk_id"]) if store is not None else None
        if chunk is not None:
            contexts.append(chunk.embedded_text)
    scores = eval_mod.faithfulness(answer, contexts, providers.eval_judge, prompts)
    scores.sample_id = sid
    query = record.get("caption")
    if query:
        relevancy = eval_mod.answer_relevancy(
            answer, query, providers.eval_judge, providers.embedder, prompts
        )
        scores.answer_relevancy = relevancy.answer_relevancy
        scores.questions_used = relevancy.questions_used
        scores.flags.extend(relevancy.flags)
    else:
        scores.flags.append("no-query")
    return scores


def _write_split_report(result_records, labels, split, out_dir: Path) -> None:
    """Rare/common/neither breakdown, one block of rows per population."""
    populations = {"rare": split.rare, "common": split.common, "neither": split.neither}
    metrics = {}
    for variant, records in sorted(result_records.items()):
        for name, ids in populations.items():
            results = []
            for record in records:
                if "error" in record:
                    continue
                sid = str(record["sample_id"])
                if sid not in ids or sid not in labels:
                    continue
                predicted = Classification.from_records(record.get("classification", []))
                results.append(
                    eval_mod.ClassificationResult(
                        sample_id=sid, predicted=predicted, truth=labels[sid]
                    )
                )
            if results:
                metrics[f"{variant}/{name}"] = eval_mod.all_rank_metrics(results)
    if metrics:
        eval_mod.write_classification_report(
            metrics, out_dir, stem="classification_metrics_by_split"
        )


_COMMANDS = {
    "ingest": cmd_ingest,
    "embed": cmd_embed,
    "caption": cmd_caption,
    "classify": cmd_classify,
    "evaluate": cmd_evaluate,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = config_mod.load_config(args.config)
        return _COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        print("interrupted; completed records were flushed", file=sys.stderr)
        return EXIT_FATAL
    except BioragError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
