from __future__ import annotations

import numpy as np
import pytest

from biorag.corpus import ChunkMeta
from biorag.prompts import PromptLibrary
from biorag.vectorstore import StoredChunk, VectorStore, normalize


@pytest.fixture(scope="session")
def prompts() -> PromptLibrary:
    return PromptLibrary()


META = ChunkMeta(taxon_rank="Genus", source="Wikipedia", taxon_name="Testus")


def png_bytes(tag: int = 0, size: int = 32) -> bytes:
    """Minimal bytes that pass the PNG signature sniff."""
    return b"\x89PNG\r\n\x1a\n" + bytes([tag % 256]) * size


def make_store(vectors: dict[str, list[float]], meta_by_id: dict[str, ChunkMeta] | None = None) -> VectorStore:
    """Store from raw id->vector pairs; vectors are normalized on the way in."""
    dims = {len(v) for v in vectors.values()}
    assert len(dims) == 1
    store = VectorStore(dim=dims.pop())
    items = []
    for cid, vec in vectors.items():
        meta = (meta_by_id or {}).get(cid, META)
        items.append(
            StoredChunk(
                chunk_id=cid,
                meta=meta,
                contextual_text="",
                text=f"text of {cid}",
                vector=normalize(np.asarray(vec, dtype=np.float64)),
            )
        )
    store.upsert(items)
    return store


def brute_force_topk(store: VectorStore, query, k: int, allowed_ids=None) -> list[str]:
    """Independent oracle: per-item float64 dot products, python sort with
    explicit (-score, chunk_id) key."""
    q = np.asarray(query, dtype=np.float64)
    scored = []
    for cid in store.ids():
        if allowed_ids is not None and cid not in allowed_ids:
            continue
        vec = store.get(cid).vector.astype(np.float64)
        scored.append((float(np.dot(vec, q)), cid))
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    return [cid for _, cid in scored[:k]]


def brute_force_mmr(store: VectorStore, query, k: int, fetch_k: int, lam: float,
                    allowed_ids=None) -> list[str]:
    """Independent oracle for the greedy MMR objective over the top-fetch_k pool."""
    q = np.asarray(query, dtype=np.float64)
    pool = brute_force_topk(store, q, fetch_k, allowed_ids)
    vecs = {cid: store.get(cid).vector.astype(np.float64) for cid in pool}
    rel = {cid: float(np.dot(vecs[cid], q)) for cid in pool}

    selected: list[str] = []
    remaining = list(pool)
    while remaining and len(selected) < k:
        if not selected:
            best = min(remaining, key=lambda cid: (-rel[cid], cid))
        else:
            def objective(cid: str) -> float:
                max_sim = max(float(np.dot(vecs[cid], vecs[s])) for s in selected)
                return lam * rel[cid] - (1.0 - lam) * max_sim
            best = min(remaining, key=lambda cid: (-objective(cid), cid))
        selected.append(best)
        remaining.remove(best)
    return selected
