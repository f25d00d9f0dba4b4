from __future__ import annotations

import json

import pytest
from hypothesis import given, settings, strategies as st

from biorag.corpus import (
    Chunk,
    ChunkMeta,
    FilterDecision,
    ScaledTokenCounter,
    SourceDocument,
    WhitespaceTokenCounter,
    chunk_from_record,
    chunk_to_record,
    chunk_token_count,
    contextualize,
    count_tokens,
    filter_chunk,
    ingest_corpus,
    load_documents,
    make_chunk_id,
    read_chunks,
    split_recursive,
    split_text_recursive,
    write_chunks,
)
from biorag.providers import MockChatClient

WC = WhitespaceTokenCounter()


def doc_of(text: str, doc_id: str = "d1") -> SourceDocument:
    return SourceDocument(
        doc_id=doc_id, source="Wikipedia", taxon_name="Argiope", taxon_rank="Genus", text=text
    )


def words(n: int, prefix: str = "w") -> str:
    return " ".join(f"{prefix}{i}" for i in range(n))


class TestTokenCounting:
    def test_empty_is_zero(self):
        assert count_tokens("", WC) == 0
        assert count_tokens("   \n\t ", WC) == 0

    def test_three_words(self):
        assert count_tokens("a b c", WC) == 3

    def test_ten_word_sentence(self):
        sentence = "the quick brown fox jumps over one very lazy dog"
        assert len(sentence.split()) == 10
        assert count_tokens(sentence, WC) == 10

    def test_scaled_counter_rounds_up(self):
        scaled = ScaledTokenCounter(1.3)
        assert scaled.count("a b c") == 4  # ceil(3 * 1.3)
        assert scaled.count("") == 0

    def test_scaled_counter_rejects_nonpositive_factor(self):
        with pytest.raises(ValueError):
            ScaledTokenCounter(0.0)


class TestSplitRecursive:
    def test_ten_tokens_budget_four(self):
        chunks, warnings = split_recursive(doc_of(words(10)), 4, WC)
        assert [c.token_count for c in chunks] == [4, 4, 2]
        assert warnings == []

    def test_short_text_single_chunk(self):
        doc = doc_of("just three words")
        chunks, _ = split_recursive(doc, 100, WC)
        assert len(chunks) == 1
        assert chunks[0].text == doc.text

    def test_paragraph_boundary_preferred(self):
        doc = doc_of("one two three\n\nfour five six")
        chunks, _ = split_recursive(doc, 4, WC)
        assert [c.text for c in chunks] == ["one two three", "four five six"]

    def test_seq_contiguous_and_ids_sortable(self):
        chunks, _ = split_recursive(doc_of(words(30)), 4, WC)
        assert [c.seq for c in chunks] == list(range(len(chunks)))
        assert [c.chunk_id for c in chunks] == sorted(c.chunk_id for c in chunks)
        assert chunks[0].chunk_id == make_chunk_id("d1", 0)

    def test_oversized_indivisible_token_warned(self):
        class CharCounter:
            name = "chars"

            def count(self, text: str) -> int:
                return len(text)

        chunks, warnings = split_text_recursive("abcdefghij", 4, CharCounter())
        assert chunks == ["abcdefghij"]
        assert len(warnings) == 1

    def test_no_token_loss(self):
        doc = doc_of("alpha beta\ngamma delta\n\nepsilon zeta eta theta iota")
        chunks, _ = split_recursive(doc, 3, WC)
        rebuilt = " ".join(" ".join(c.text.split()) for c in chunks)
        assert rebuilt.split() == doc.text.split()

    def test_deterministic(self):
        doc = doc_of(words(57))
        first, _ = split_recursive(doc, 7, WC)
        second, _ = split_recursive(doc, 7, WC)
        assert [(c.chunk_id, c.text) for c in first] == [(c.chunk_id, c.text) for c in second]


@settings(max_examples=60)
@given(
    st.lists(st.integers(min_value=1, max_value=9), min_size=1, max_size=40),
    st.integers(min_value=1, max_value=12),
)
def test_split_properties(word_lengths, budget):
    text = " ".join("x" * n for n in word_lengths)
    pieces, warnings = split_text_recursive(text, budget, WC)
    assert warnings == []
    for piece in pieces:
        assert WC.count(piece) <= budget
    rebuilt = [w for piece in pieces for w in piece.split()]
    assert rebuilt == text.split()


class TestFilterChunk:
    def make_chunk(self, text: str) -> Chunk:
        return Chunk(
            chunk_id="d1#00000",
            doc_id="d1",
            seq=0,
            text=text,
            contextual_text="",
            token_count=WC.count(text),
            metadata=ChunkMeta("Genus", "Wikipedia", "Argiope"),
        )

    def test_citation_chunk_rejected(self, prompts):
        doc = doc_of("body " + words(10))
        decision = filter_chunk(
            self.make_chunk("References [1] Smith 2004."), doc, MockChatClient(), prompts
        )
        assert decision.useful is False
        assert decision.contextual_text == "references header"

    def test_descriptive_chunk_accepted_with_ctx_prefix(self, prompts):
        doc = doc_of("body " + words(10))
        chunk = self.make_chunk("The spider has banded legs and builds orb webs daily.")
        decision = filter_chunk(chunk, doc, MockChatClient(), prompts)
        assert decision.useful is True
        assert decision.contextual_text.startswith("ctx:")
        assert decision.contextual_text == "ctx: Argiope (Genus)"

    def test_short_chunk_rejected(self, prompts):
        doc = doc_of("body " + words(10))
        decision = filter_chunk(self.make_chunk("tiny chunk here"), doc, MockChatClient(), prompts)
        assert decision.useful is False
        assert decision.contextual_text == "too short"

    def test_empty_chunk_skips_judge(self, prompts):
        calls = []

        class Spy:
            def complete(self, prompt, **kwargs):
                calls.append(prompt)
                return "{}"

        decision = filter_chunk(self.make_chunk("   "), doc_of("body"), Spy(), prompts)
        assert decision.useful is False
        assert calls == []

    def test_repair_retry_then_success(self, prompts):
        replies = iter(["not json at all", '{"useful": true, "contextual_text": "ctx: x"}'])

        class Flaky:
            def complete(self, prompt, **kwargs):
                return next(replies)

        decision = filter_chunk(
            self.make_chunk("a long descriptive chunk about spiders here"),
            doc_of("body"), Flaky(), prompts,
        )
        assert decision == FilterDecision(True, "ctx: x")

    def test_double_failure_fails_closed(self, prompts):
        class Broken:
            def complete(self, prompt, **kwargs):
                return "still not json"

        decision = filter_chunk(
            self.make_chunk("a long descriptive chunk about spiders here"),
            doc_of("body"), Broken(), prompts,
        )
        assert decision.useful is False
        assert decision.contextual_text == "judge-parse-failure"

    def test_fenced_json_accepted(self, prompts):
        class Fenced:
            def complete(self, prompt, **kwargs):
                return '```json\n{"useful": true, "contextual_text": "ctx: y"}\n```'

        decision = filter_chunk(
            self.make_chunk("a long descriptive chunk about spiders here"),
            doc_of("body"), Fenced(), prompts,
        )
        assert decision == FilterDecision(True, "ctx: y")


class TestContextualize:
    def make_chunk(self, n_tokens: int) -> Chunk:
        text = words(n_tokens)
        return Chunk(
            chunk_id="d1#00000", doc_id="d1", seq=0, text=text,
            contextual_text="", token_count=n_tokens,
            metadata=ChunkMeta("Genus", "Wikipedia", "Argiope"),
        )

    def test_separator_token_charged(self):
        # context + one separator token + body
        assert chunk_token_count(words(20, "c"), words(1000), WC) == 1021

    def test_budget_arithmetic(self):
        chunk = contextualize(self.make_chunk(1000), FilterDecision(True, words(20, "c")), WC)
        assert chunk.token_count == 1021
        assert chunk.contextual_text == words(20, "c")

    def test_saturated_budget_empties_context(self):
        chunk = contextualize(self.make_chunk(1024), FilterDecision(True, "some context here"), WC)
        assert chunk.contextual_text == ""
        assert chunk.token_count == 1024

    def test_small_chunk_with_context(self):
        chunk = contextualize(self.make_chunk(3), FilterDecision(True, "ctx: Arthropoda"), WC)
        # 2 context words + 1 separator token + 3 body words
        assert chunk.token_count == 6

    def test_truncates_context_tail_only(self):
        chunk = contextualize(
            self.make_chunk(1020), FilterDecision(True, "alpha beta gamma delta epsilon"), WC
        )
        assert chunk.contextual_text == "alpha beta gamma"
        assert chunk.token_count == 1024
        assert WC.count(chunk.text) == 1020

    def test_embedded_text_prepends_context(self):
        chunk = contextualize(self.make_chunk(3), FilterDecision(True, "ctx: here"), WC)
        assert chunk.embedded_text == "ctx: here\n\n" + chunk.text

    def test_requires_useful_decision(self):
        with pytest.raises(ValueError):
            contextualize(self.make_chunk(3), FilterDecision(False, "references header"), WC)


class TestIngest:
    def docs(self):
        useful = (
            "The beetle shows a glossy green carapace with ridged elytra and long antennae. "
            "Its larvae develop inside rotting hardwood over two full seasons."
        )
        return [
            doc_of(useful, "docA"),
            doc_of("References\n[1] Smith 2004.\n[2] Jones 2010.", "docB"),
        ]

    def test_document_count(self, prompts):
        _, stats = ingest_corpus(self.docs(), MockChatClient(), WC, prompts)
        assert stats.documents == 2

    def test_fully_filtered_document(self, prompts):
        _, stats = ingest_corpus([self.docs()[1]], MockChatClient(), WC, prompts)
        assert stats.retained == 0
        assert stats.filtered == stats.produced

    def test_ten_tokens_budget_four_produces_three(self, prompts):
        _, stats = ingest_corpus([doc_of(words(10))], MockChatClient(), WC, prompts, max_tokens=4)
        assert stats.produced == 3

    def test_conservation(self, prompts):
        retained, stats = ingest_corpus(self.docs(), MockChatClient(), WC, prompts, max_tokens=8)
        assert stats.produced == stats.retained + stats.filtered
        assert stats.retained == len(retained)

    def test_retained_chunks_satisfy_invariants(self, prompts):
        retained, _ = ingest_corpus(self.docs(), MockChatClient(), WC, prompts, max_tokens=16)
        for chunk in retained:
            assert chunk.token_count <= 16
            meta = chunk.metadata.as_dict()
            assert all(meta.values())
            assert set(meta) == {"taxon_rank", "source", "taxon_name"}

    def test_order_independent_of_worker_count(self, prompts):
        docs = [doc_of(words(40), f"doc{i}") for i in range(6)]
        serial, _ = ingest_corpus(docs, MockChatClient(), WC, prompts, max_tokens=8, max_workers=1)
        parallel, _ = ingest_corpus(docs, MockChatClient(), WC, prompts, max_tokens=8, max_workers=4)
        assert [c.chunk_id for c in serial] == [c.chunk_id for c in parallel]


class TestDocumentLoading:
    def test_round_trip_and_byte_identical_rerun(self, tmp_path, prompts):
        corpus = tmp_path / "corpus.jsonl"
        with open(corpus, "w") as fh:
            for i in range(3):
                fh.write(json.dumps({
                    "doc_id": f"doc{i}", "source": "Wikispecies", "taxon_name": f"T{i}",
                    "taxon_rank": "Family",
                    "text": f"Description {i} of the organism with several informative words here.",
                }) + "\n")
        docs, errors = load_documents(corpus)
        assert errors == []
        out1, out2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for out in (out1, out2):
            retained, _ = ingest_corpus(docs, MockChatClient(), WC, prompts)
            write_chunks(out, retained)
        assert out1.read_bytes() == out2.read_bytes()
        assert [c.chunk_id for c in read_chunks(out1)] == sorted(
            c.chunk_id for c in read_chunks(out1)
        )

    def test_bad_lines_recorded_not_fatal(self, tmp_path):
        corpus = tmp_path / "corpus.jsonl"
        corpus.write_text(
            json.dumps({"doc_id": "ok", "source": "Wikipedia", "taxon_name": "T",
                        "taxon_rank": "unranked", "text": "some words"}) + "\n"
            + "{broken\n"
            + json.dumps({"doc_id": "ok", "source": "Wikipedia", "taxon_name": "T",
                          "taxon_rank": "unranked", "text": "duplicate id"}) + "\n"
            + json.dumps({"doc_id": "bad", "source": "Nowhere", "taxon_name": "T",
                          "taxon_rank": "unranked", "text": "words"}) + "\n",
        )
        docs, errors = load_documents(corpus)
        assert [d.doc_id for d in docs] == ["ok"]
        assert len(errors) == 3

    def test_chunk_record_round_trip(self):
        chunk = Chunk(
            chunk_id="d#00003", doc_id="d", seq=3, text="a b", contextual_text="ctx",
            token_count=4, metadata=ChunkMeta("Order", "Wikispecies", "Aedes"),
        )
        assert chunk_from_record(chunk_to_record(chunk)) == chunk
