"""Pipeline configuration: one JSON document, fully validated before any work.

Relative paths in the file resolve against the config file's directory so a
fixture tree can be copied anywhere. The canonical hash covers the effective
(default-filled) configuration, so cosmetic reformatting does not invalidate
a resumable run, but changing any effective setting does.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .corpus import DEFAULT_TOKEN_BUDGET, ScaledTokenCounter, TokenCounter, WhitespaceTokenCounter
from .errors import ConfigError
from .prompts import PromptLibrary
from .providers import (
    HttpChatClient,
    HttpEmbedder,
    HttpReranker,
    MockCaptioner,
    MockChatClient,
    MockEmbedder,
    MockReranker,
    ProviderConfig,
    fixed_clock,
)
from .pipeline import utc_now

STAGES = (
    "captioner",
    "filter_judge",
    "multiquery",
    "responder",
    "embedder",
    "reranker",
    "eval_judge",
)


@dataclass
class RetrievalParams:
    k: int = 30
    rerank_top: int = 10
    fetch_k: int = 40
    mmr_lambda: float = 0.5
    n_queries: int = 3
    mmr_k: int = 10


@dataclass
class PipelineConfig:
    seed: int
    store_path: Path
    store_dim: int
    tokenizer_kind: str
    token_budget: int
    token_factor: float
    retrieval: RetrievalParams
    max_concurrent_requests: int
    prompts_dir: Path | None
    providers: dict[str, ProviderConfig]
    config_hash: str = ""
    base_dir: Path = field(default_factory=Path)

    def token_counter(self) -> TokenCounter:
        if self.tokenizer_kind == "whitespace":
            return WhitespaceTokenCounter()
        if self.tokenizer_kind == "scaled":
            return ScaledTokenCounter(self.token_factor)
        raise ConfigError(f"unknown tokenizer kind: {self.tokenizer_kind}")

    def prompt_library(self) -> PromptLibrary:
        return PromptLibrary(self.prompts_dir)


def _canonical_hash(effective: dict) -> str:
    blob = json.dumps(effective, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _take(section: dict, key: str, default):
    value = section.get(key, default)
    if value is None:
        value = default
    return value


def load_config(path: Path | str) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    base = path.resolve().parent

    store = raw.get("store", {})
    tokenizer = raw.get("tokenizer", {})
    retrieval_raw = raw.get("retrieval", {})
    concurrency = raw.get("concurrency", {})
    providers_raw = raw.get("providers", {})

    retrieval = RetrievalParams(
        k=int(_take(retrieval_raw, "k", 30)),
        rerank_top=int(_take(retrieval_raw, "rerank_top", 10)),
        fetch_k=int(_take(retrieval_raw, "fetch_k", 40)),
        mmr_lambda=float(_take(retrieval_raw, "mmr_lambda", 0.5)),
        n_queries=int(_take(retrieval_raw, "n_queries", 3)),
        mmr_k=int(_take(retrieval_raw, "mmr_k", 10)),
    )
    if retrieval.k < 1:
        raise ConfigError("retrieval.k must be >= 1")
    if not 1 <= retrieval.rerank_top <= retrieval.k:
        raise ConfigError("need 1 <= retrieval.rerank_top <= retrieval.k")
    if retrieval.mmr_k < 1 or retrieval.mmr_k > retrieval.fetch_k:
        raise ConfigError("need 1 <= retrieval.mmr_k <= retrieval.fetch_k")
    if not 0.0 <= retrieval.mmr_lambda <= 1.0:
        raise ConfigError("retrieval.mmr_lambda must be in [0, 1]")
    if retrieval.n_queries < 0:
        raise ConfigError("retrieval.n_queries must be >= 0")

    token_budget = int(_take(tokenizer, "budget", DEFAULT_TOKEN_BUDGET))
    if token_budget < 1:
        raise ConfigError("tokenizer.budget must be >= 1")
    tokenizer_kind = str(_take(tokenizer, "kind", "whitespace"))
    token_factor = float(_take(tokenizer, "factor", 1.3))
    if tokenizer_kind not in ("whitespace", "scaled"):
        raise ConfigError(f"unknown tokenizer kind: {tokenizer_kind}")

    store_dim = int(_take(store, "dim", 1024))
    if store_dim < 1:
        raise ConfigError("store.dim must be >= 1")
    store_path = str(_take(store, "path", "store.bvs"))

    max_concurrent = int(_take(concurrency, "max_concurrent_requests", 4))
    if max_concurrent < 1:
        raise ConfigError("concurrency.max_concurrent_requests must be >= 1")

    prompts_dir_raw = raw.get("prompts_dir")
    prompts_dir = None
    if prompts_dir_raw:
        prompts_dir = _resolve(base, str(prompts_dir_raw))
        if not prompts_dir.is_dir():
            raise ConfigError(f"prompts_dir does not exist: {prompts_dir}")

    providers: dict[str, ProviderConfig] = {}
    for stage in STAGES:
        entry = providers_raw.get(stage, {"mock": True})
        if not isinstance(entry, dict):
            raise ConfigError(f"providers.{stage} must be an object")
        cfg = ProviderConfig(
            base_url=str(entry.get("base_url", "")),
            model=str(entry.get("model", "")),
            api_key_env=entry.get("api_key_env"),
            timeout_s=float(entry.get("timeout_s", 60.0)),
            max_retries=int(entry.get("max_retries", 3)),
            max_concurrent_requests=int(entry.get("max_concurrent_requests", 4)),
            dim=int(entry["dim"]) if entry.get("dim") is not None else None,
            mock=bool(entry.get("mock", False)),
        )
        if not cfg.mock and not cfg.base_url:
            raise ConfigError(f"providers.{stage}: base_url required unless mock is true")
        providers[stage] = cfg
    if providers["embedder"].dim is None:
        providers["embedder"].dim = store_dim
    if providers["embedder"].dim != store_dim:
        raise ConfigError(
            f"embedder dim {providers['embedder'].dim} != store dim {store_dim}"
        )

    unknown = set(providers_raw) - set(STAGES)
    if unknown:
        raise ConfigError(f"unknown provider stages: {sorted(unknown)}")

    effective = {
        "seed": int(raw.get("seed", 0)),
        "store": {"path": store_path, "dim": store_dim},
        "tokenizer": {"kind": tokenizer_kind, "budget": token_budget, "factor": token_factor},
        "retrieval": {
            "k": retrieval.k,
            "rerank_top": retrieval.rerank_top,
            "fetch_k": retrieval.fetch_k,
            "mmr_lambda": retrieval.mmr_lambda,
            "n_queries": retrieval.n_queries,
            "mmr_k": retrieval.mmr_k,
        },
        "concurrency": {"max_concurrent_requests": max_concurrent},
        "prompts_dir": str(prompts_dir_raw) if prompts_dir_raw else None,
        "providers": {
            stage: {
                "base_url": cfg.base_url,
                "model": cfg.model,
                "api_key_env": cfg.api_key_env,
                "timeout_s": cfg.timeout_s,
                "max_retries": cfg.max_retries,
                "max_concurrent_requests": cfg.max_concurrent_requests,
                "dim": cfg.dim,
                "mock": cfg.mock,
            }
            for stage, cfg in providers.items()
        },
    }

    return PipelineConfig(
        seed=int(raw.get("seed", 0)),
        store_path=_resolve(base, store_path),
        store_dim=store_dim,
        tokenizer_kind=tokenizer_kind,
        token_budget=token_budget,
        token_factor=token_factor,
        retrieval=retrieval,
        max_concurrent_requests=max_concurrent,
        prompts_dir=prompts_dir,
        providers=providers,
        config_hash=_canonical_hash(effective),
        base_dir=base,
    )


def _resolve(base: Path, ref: str) -> Path:
    p = Path(ref)
    return p if p.is_absolute() else base / p


@dataclass
class ProviderSet:
    """Instantiated per-stage providers plus the clock the run should use."""

    captioner: object
    filter_judge: object
    multiquery: object
    responder: object
    embedder: object
    reranker: object
    eval_judge: object
    clock: Callable[[], str]
    descriptors: dict[str, dict[str, str]]
    all_mock: bool


def build_providers(config: PipelineConfig, force_mock: bool = False) -> ProviderSet:
    """Build stage providers; force_mock swaps every stage for its mock.

    Backoff jitter for HTTP providers derives from the config seed so retry
    timing is reproducible too.
    """
    stage_cfg = {
        stage: (
            ProviderConfig(mock=True, dim=cfg.dim)
            if force_mock
            else cfg
        )
        for stage, cfg in config.providers.items()
    }

    def chat(stage: str):
        cfg = stage_cfg[stage]
        if cfg.mock:
            return MockChatClient()
        return HttpChatClient(cfg, jitter_rng=random.Random(config.seed))

    cfg = stage_cfg["captioner"]
    captioner = MockCaptioner() if cfg.mock else HttpChatClient(
        cfg, jitter_rng=random.Random(config.seed)
    )

    cfg = stage_cfg["embedder"]
    embedder = (
        MockEmbedder(dim=cfg.dim or config.store_dim)
        if cfg.mock
        else HttpEmbedder(cfg, jitter_rng=random.Random(config.seed))
    )

    cfg = stage_cfg["reranker"]
    reranker = MockReranker() if cfg.mock else HttpReranker(
        cfg, jitter_rng=random.Random(config.seed)
    )

    all_mock = all(cfg.mock for cfg in stage_cfg.values())
    return ProviderSet(
        captioner=captioner,
        filter_judge=chat("filter_judge"),
        multiquery=chat("multiquery"),
        responder=chat("responder"),
        embedder=embedder,
        reranker=reranker,
        eval_judge=chat("eval_judge"),
        clock=fixed_clock if all_mock else utc_now,
        descriptors={stage: cfg.describe() for stage, cfg in stage_cfg.items()},
        all_mock=all_mock,
    )
