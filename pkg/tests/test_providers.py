from __future__ import annotations

import json
import random
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from biorag.errors import ConfigError, ProviderAuthError, ProviderError
from biorag.providers import (
    HttpChatClient,
    HttpEmbedder,
    HttpReranker,
    MockCaptioner,
    MockChatClient,
    MockEmbedder,
    MockReranker,
    ProviderConfig,
    RetryPolicy,
    TransientProviderFailure,
    fnv1a64,
    hash8,
    mock_embedding,
    sniff_image_format,
)
from biorag.providers.mock import XorShift64Star, judge_chunk_useful

from conftest import png_bytes


class TestHashingPrimitives:
    def test_fnv1a64_reference_values(self):
        # classic published FNV-1a test vectors
        assert fnv1a64(b"") == 0xCBF29CE484222325
        assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
        assert fnv1a64(b"foobar") == 0x85944171F73967E8

    def test_hash8_is_prefix_of_padded_hex(self):
        assert hash8(b"foobar") == "85944171"
        assert len(hash8(b"")) == 8

    def test_xorshift_nonzero_guard(self):
        gen = XorShift64Star(0)
        assert gen.next_u64() != 0

    def test_xorshift_units_in_range(self):
        gen = XorShift64Star(12345)
        values = [gen.next_unit() for _ in range(1000)]
        assert all(-1.0 <= v < 1.0 for v in values)


class TestMockEmbedder:
    def test_identical_text_identical_vector(self):
        emb = MockEmbedder(dim=16)
        m = emb.embed(["abc", "abc"])
        assert float(m[0] @ m[1]) == 1.0

    def test_distinct_texts_not_parallel(self):
        emb = MockEmbedder(dim=64)
        m = emb.embed(
            ["a long description of a beetle with green elytra",
             "an unrelated account of marsh vegetation in spring"]
        )
        assert float(m[0] @ m[1]) < 1.0 - 1e-6

    def test_batch_order_preserved(self):
        emb = MockEmbedder(dim=8)
        batch = emb.embed(["one", "two", "three"])
        singles = [emb.embed([t])[0] for t in ["one", "two", "three"]]
        assert batch.shape == (3, 8)
        for row, single in zip(batch, singles):
            assert np.array_equal(row, single)

    def test_unit_norm_many_inputs(self):
        emb = MockEmbedder(dim=48)
        texts = [f"text number {i} padded with words" for i in range(200)]
        norms = np.linalg.norm(emb.embed(texts), axis=1)
        assert np.all(np.abs(norms - 1.0) <= 1e-6)

    def test_empty_text_rejected(self):
        with pytest.raises(ValueError):
            MockEmbedder(dim=4).embed(["ok", "  "])
        with pytest.raises(ValueError):
            MockEmbedder(dim=4).embed([])


class TestMockCaptioner:
    def test_caption_shape_and_determinism(self):
        cap = MockCaptioner()
        image = png_bytes(7)
        first = cap.complete("prompt", image=image)
        second = cap.complete("different prompt", image=image)
        assert first == second == "MOCKCAP:" + hash8(image)

    def test_zero_byte_image_rejected(self):
        with pytest.raises(ValueError):
            MockCaptioner().complete("prompt", image=b"")

    def test_undecodable_image_rejected(self):
        with pytest.raises(ValueError):
            MockCaptioner().complete("prompt", image=b"GIF89a not supported")


class TestMockReranker:
    def test_composes_mock_embeddings(self):
        rr = MockReranker(dim=32)
        docs = ["first document text", "second document text"]
        results = rr.rerank("the query", docs)
        for i, result in enumerate(results):
            expected = float(
                mock_embedding("the query", 32) @ mock_embedding(docs[i], 32)
            )
            assert result.index == i
            assert result.score == pytest.approx(expected, abs=1e-12)

    def test_single_doc(self):
        assert len(MockReranker().rerank("q", ["only"])) == 1

    def test_duplicate_docs_equal_scores(self):
        results = MockReranker().rerank("q", ["same text", "same text"])
        assert results[0].score == results[1].score


class TestMockJudgeRule:
    @pytest.mark.parametrize(
        "text,useful",
        [
            ("References [1] Smith 2004.", False),
            ("CITATION needed for this statement obviously", False),
            ("External links and other resources follow here", False),
            ("too few words", False),
            ("a descriptive account of banded legs and webs", True),
        ],
    )
    def test_heuristic(self, text, useful):
        assert judge_chunk_useful(text) is useful


class TestMockChatDeterminism:
    def test_unrecognized_prompt_echoes_hash(self):
        chat = MockChatClient()
        assert chat.complete("hello there") == chat.complete("hello there")
        assert chat.complete("hello there").startswith("MOCKCHAT:")
        assert chat.complete("hello") != chat.complete("other")

    def test_multiquery_variants(self, prompts):
        chat = MockChatClient()
        reply = chat.complete(prompts.render_multiquery("spotted beetle", 3))
        assert reply.splitlines() == [
            "spotted beetle [variant 1]",
            "spotted beetle [variant 2]",
            "spotted beetle [variant 3]",
        ]

    def test_questions_rule(self, prompts):
        chat = MockChatClient()
        reply = chat.complete(prompts.render_questions("First point. Second point. Third. Fourth.", 3))
        assert reply.splitlines() == ["Q: First point.", "Q: Second point.", "Q: Third."]

    def test_support_rule(self, prompts):
        chat = MockChatClient()
        prompt = prompts.render_support(
            ["The beetle is green.", "The beetle can fly."],
            ["Everyone agrees   the BEETLE is green.\nMore text."],
        )
        assert chat.complete(prompt).splitlines() == ["SUPPORTED", "UNSUPPORTED"]


# -- HTTP provider behavior over a local server --------------------------


class _Script(BaseHTTPRequestHandler):
    """Serves canned responses from the test-owned script list."""

    script: list[tuple[int, dict | str, dict]] = []
    requests_seen: list[dict] = []

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length) or b"{}")
        type(self).requests_seen.append(
            {"path": self.path, "auth": self.headers.get("Authorization"), "body": body}
        )
        status, payload, headers = (
            type(self).script.pop(0) if type(self).script else (500, {"error": "no script"}, {})
        )
        blob = json.dumps(payload).encode() if isinstance(payload, dict) else payload.encode()
        self.send_response(status)
        for key, value in headers.items():
            self.send_header(key, value)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def log_message(self, *args):
        pass


@pytest.fixture()
def http_server():
    server = HTTPServer(("127.0.0.1", 0), _Script)
    _Script.script = []
    _Script.requests_seen = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}", _Script
    server.shutdown()


def chat_ok(text="fine"):
    return (200, {"choices": [{"message": {"content": text}}], "usage": {"total_tokens": 5}}, {})


def make_chat(base_url, **overrides) -> HttpChatClient:
    config = ProviderConfig(base_url=base_url, model="m1", **overrides)
    return HttpChatClient(config, sleep=lambda s: None, jitter_rng=random.Random(0))


class TestHttpChat:
    def test_success_round_trip(self, http_server):
        base, script = http_server
        script.script.append(chat_ok("hello back"))
        client = make_chat(base)
        assert client.complete("hi", system="sys") == "hello back"
        sent = script.requests_seen[0]
        assert sent["path"] == "/chat/completions"
        assert sent["body"]["messages"][0] == {"role": "system", "content": "sys"}
        assert client.last_exchange.usage == {"total_tokens": 5}

    def test_transient_then_success_records_one_retry(self, http_server):
        base, script = http_server
        script.script.extend([(503, {"error": "busy"}, {}), chat_ok()])
        client = make_chat(base)
        assert client.complete("hi") == "fine"
        assert client.last_retries == 1

    def test_retries_exhausted(self, http_server):
        base, script = http_server
        script.script.extend([(500, {"e": 1}, {})] * 3)
        client = make_chat(base, max_retries=2)
        with pytest.raises(ProviderError):
            client.complete("hi")

    def test_auth_failure_never_retried(self, http_server):
        base, script = http_server
        script.script.extend([(401, {"e": "denied"}, {}), chat_ok()])
        client = make_chat(base)
        with pytest.raises(ProviderAuthError):
            client.complete("hi")
        assert len(script.requests_seen) == 1

    def test_missing_key_env_fails_before_any_request(self, http_server, monkeypatch):
        base, script = http_server
        monkeypatch.delenv("BIORAG_TEST_KEY", raising=False)
        with pytest.raises(ConfigError):
            make_chat(base, api_key_env="BIORAG_TEST_KEY")
        assert script.requests_seen == []

    def test_key_sent_as_bearer(self, http_server, monkeypatch):
        base, script = http_server
        monkeypatch.setenv("BIORAG_TEST_KEY", "sekret")
        script.script.append(chat_ok())
        make_chat(base, api_key_env="BIORAG_TEST_KEY").complete("hi")
        assert script.requests_seen[0]["auth"] == "Bearer sekret"

    def test_malformed_payload_is_permanent_error(self, http_server):
        base, script = http_server
        script.script.append((200, {"nonsense": True}, {}))
        with pytest.raises(ProviderError):
            make_chat(base).complete("hi")

    def test_image_attached_as_data_url(self, http_server):
        base, script = http_server
        script.script.append(chat_ok())
        make_chat(base).complete("describe", image=png_bytes(1))
        content = script.requests_seen[0]["body"]["messages"][0]["content"]
        assert content[0] == {"type": "text", "text": "describe"}
        assert content[1]["image_url"]["url"].startswith("data:image/png;base64,")

    def test_retry_after_honored(self, http_server):
        base, script = http_server
        script.script.extend([(429, {"e": 1}, {"Retry-After": "7"}), chat_ok()])
        delays = []
        config = ProviderConfig(base_url=base, model="m1")
        client = HttpChatClient(config, sleep=delays.append, jitter_rng=random.Random(0))
        client.complete("hi")
        assert delays == [7.0]


class TestHttpEmbedderAndReranker:
    def test_embeddings_sorted_and_normalized(self, http_server):
        base, script = http_server
        script.script.append(
            (200, {"data": [
                {"index": 1, "embedding": [0.0, 2.0]},
                {"index": 0, "embedding": [3.0, 4.0]},
            ]}, {})
        )
        emb = HttpEmbedder(
            ProviderConfig(base_url=base, model="e", dim=2),
            sleep=lambda s: None,
        )
        out = emb.embed(["a", "b"])
        assert np.allclose(out, [[0.6, 0.8], [0.0, 1.0]])

    def test_embedder_requires_dim(self, http_server):
        base, _ = http_server
        with pytest.raises(ConfigError):
            HttpEmbedder(ProviderConfig(base_url=base, model="e"))

    def test_rerank_scores_every_doc(self, http_server):
        base, script = http_server
        script.script.append(
            (200, {"results": [
                {"index": 1, "relevance_score": 0.2},
                {"index": 0, "relevance_score": 0.9},
            ]}, {})
        )
        rr = HttpReranker(ProviderConfig(base_url=base, model="r"), sleep=lambda s: None)
        results = rr.rerank("q", ["d0", "d1"])
        assert [(r.index, r.score) for r in results] == [(0, 0.9), (1, 0.2)]

    def test_rerank_incomplete_payload_rejected(self, http_server):
        base, script = http_server
        script.script.append((200, {"results": [{"index": 0, "relevance_score": 0.5}]}, {}))
        rr = HttpReranker(ProviderConfig(base_url=base, model="r"), sleep=lambda s: None)
        with pytest.raises(ProviderError):
            rr.rerank("q", ["d0", "d1"])


class TestRetryPolicy:
    def test_backoff_monotone_within_jitter(self):
        delays = []
        policy = RetryPolicy(max_retries=4, rng=random.Random(1), sleep=delays.append)

        calls = {"n": 0}

        def op():
            calls["n"] += 1
            if calls["n"] <= 4:
                raise TransientProviderFailure("again")
            return "done"

        result, retries = policy.run(op)
        assert result == "done"
        assert retries == 4
        assert len(delays) == 4
        # base 1s, factor 2, jitter adds at most 10%
        for i, delay in enumerate(delays):
            assert 2**i <= delay <= 2**i * 1.1
        assert all(b >= a for a, b in zip(delays, delays[1:]))

    def test_retry_cap_respected(self):
        policy = RetryPolicy(max_retries=2, rng=random.Random(1), sleep=lambda s: None)
        calls = {"n": 0}

        def op():
            calls["n"] += 1
            raise TransientProviderFailure("nope")

        with pytest.raises(ProviderError):
            policy.run(op)
        assert calls["n"] == 3


class TestImageSniff:
    def test_png(self):
        assert sniff_image_format(png_bytes()) == "png"

    def test_jpeg(self):
        assert sniff_image_format(b"\xff\xd8\xff\xe0payload") == "jpeg"

    def test_rejects_empty_and_unknown(self):
        with pytest.raises(ValueError):
            sniff_image_format(b"")
        with pytest.raises(ValueError):
            sniff_image_format(b"BM bitmap")
