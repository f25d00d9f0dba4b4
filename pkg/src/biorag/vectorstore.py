"""Embedded vector store: unit-norm embeddings, exact cosine top-k, and MMR.

Search is exhaustive and exact (no approximate index), with all score ties
broken by ascending chunk_id so results never depend on insertion order.
The scoring and MMR inner loops are delegated to biorag.kernels.

Persistence format (single file, little-endian):

    magic   4 bytes  b"BVST"
    version u32      currently 1
    dim     u32
    count   u64
    count records, sorted by chunk_id, each:
        record_len u32          length in bytes of the rest of the record
        chunk_id, taxon_rank, source, taxon_name, contextual_text, text
                                each as u32 byte length + UTF-8 bytes
        vector                  dim float32 values
    crc32   u32      checksum of every preceding byte

Any single-byte corruption is detected on load (CRC32 catches all error
bursts up to 32 bits; structural damage fails earlier).
"""

from __future__ import annotations

import binascii
import os
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import kernels
from .corpus import Chunk, ChunkMeta
from .errors import (
    DimensionMismatchError,
    StoreChecksumError,
    StoreError,
    StoreFormatError,
)

MAGIC = b"BVST"
VERSION = 1
DEFAULT_DIM = 1024

#: Stored vectors must be unit norm within this tolerance (float32 storage).
NORM_TOLERANCE = 1e-4

MetadataFilter = Mapping[str, str] | Callable[[ChunkMeta], bool] | None


def normalize(vector) -> np.ndarray:
    """Scale a raw vector to unit L2 norm (float64).

    Rejects zero and non-finite input; large magnitudes are pre-scaled so the
    norm cannot overflow.
    """
    arr = np.asarray(vector, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("expected a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector has non-finite components")
    peak = np.max(np.abs(arr))
    if peak == 0.0:
        raise ValueError("zero vector has no direction")
    scaled = arr / peak
    return scaled / np.linalg.norm(scaled)


def cosine(a, b) -> float:
    """Cosine similarity of two unit vectors, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dims differ: {a.shape} vs {b.shape}")
    return float(np.clip(a @ b, -1.0, 1.0))


@dataclass(frozen=True, eq=False)
class StoredChunk:
    """What the store keeps per chunk: id, the metadata triple, texts, vector."""

    chunk_id: str
    meta: ChunkMeta
    contextual_text: str
    text: str
    vector: np.ndarray

    @property
    def embedded_text(self) -> str:
        if not self.contextual_text:
            return self.text
        return self.contextual_text + "\n\n" + self.text

    @classmethod
    def from_chunk(cls, chunk: Chunk, vector) -> "StoredChunk":
        return cls(
            chunk_id=chunk.chunk_id,
            meta=chunk.metadata,
            contextual_text=chunk.contextual_text,
            text=chunk.text,
            vector=np.asarray(vector, dtype=np.float64),
        )


@dataclass(frozen=True, eq=False)
class SearchHit:
    chunk_id: str
    score: float
    chunk: StoredChunk


class _Snapshot:
    """Immutable view the readers use; swapped atomically by writers."""

    __slots__ = ("ids", "items", "matrix")

    def __init__(self, ids: tuple[str, ...], items: dict[str, StoredChunk], matrix: np.ndarray):
        self.ids = ids
        self.items = items
        self.matrix = matrix


def _match_filter(meta: ChunkMeta, flt: MetadataFilter) -> bool:
    if flt is None:
        return True
    if callable(flt):
        return bool(flt(meta))
    fields = meta.as_dict()
    for key, value in flt.items():
        if key not in fields:
            raise ValueError(f"unknown metadata field in filter: {key!r}")
        if fields[key] != value:
            return False
    return True


class VectorStore:
    """Exact-search store over unit-norm float32 vectors with chunk payloads.

    Concurrency contract: any number of readers may search while at most one
    writer upserts; a search never observes a partially applied batch because
    writers build a fresh snapshot and swap it in a single assignment.
    """

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self._dim = int(dim)
        self._write_lock = threading.Lock()
        self._snap = _Snapshot((), {}, np.empty((0, self._dim), dtype=np.float32))

    @property
    def dim(self) -> int:
        return self._dim

    def __len__(self) -> int:
        return len(self._snap.ids)

    def ids(self) -> tuple[str, ...]:
        return self._snap.ids

    def get(self, chunk_id: str) -> StoredChunk | None:
        return self._snap.items.get(chunk_id)

    def upsert(self, items: Sequence[StoredChunk]) -> int:
        """Insert or replace by chunk_id; returns the new store size."""
        cleaned: dict[str, StoredChunk] = {}
        for item in items:
            if not item.chunk_id:
                raise StoreError("chunk_id must be non-empty")
            vec = np.asarray(item.vector, dtype=np.float64)
            if vec.ndim != 1 or vec.shape[0] != self._dim:
                raise DimensionMismatchError(
                    f"{item.chunk_id}: vector dim {vec.shape} != store dim {self._dim}"
                )
            if not np.all(np.isfinite(vec)):
                raise StoreError(f"{item.chunk_id}: vector has non-finite components")
            norm = float(np.linalg.norm(vec))
            if abs(norm - 1.0) > NORM_TOLERANCE:
                raise StoreError(
                    f"{item.chunk_id}: vector norm {norm:.6f} outside unit tolerance"
                )
            cleaned[item.chunk_id] = StoredChunk(
                chunk_id=item.chunk_id,
                meta=item.meta,
                contextual_text=item.contextual_text,
                text=item.text,
                vector=vec.astype(np.float32),
            )
        with self._write_lock:
            merged = dict(self._snap.items)
            merged.update(cleaned)
            self._snap = self._build_snapshot(merged)
            return len(self._snap.ids)

    def _build_snapshot(self, items: dict[str, StoredChunk]) -> _Snapshot:
        ids = tuple(sorted(items))
        if ids:
            matrix = np.stack([items[i].vector for i in ids]).astype(np.float32)
        else:
            matrix = np.empty((0, self._dim), dtype=np.float32)
        return _Snapshot(ids, items, np.ascontiguousarray(matrix))

    def _prepare_query(self, query) -> np.ndarray:
        q = np.asarray(query, dtype=np.float64)
        if q.ndim != 1 or q.shape[0] != self._dim:
            raise DimensionMismatchError(f"query dim {q.shape} != store dim {self._dim}")
        if not np.all(np.isfinite(q)):
            raise ValueError("query has non-finite components")
        norm = float(np.linalg.norm(q))
        if abs(norm - 1.0) > 1e-3:
            raise ValueError(f"query must be unit norm (got {norm:.6f}); normalize first")
        return q

    def _scan(self, snap: _Snapshot, query: np.ndarray, flt: MetadataFilter):
        scores = kernels.score_all(snap.matrix, query)
        if flt is None:
            allowed = np.ones(len(snap.ids), dtype=bool)
        else:
            allowed = np.fromiter(
                (_match_filter(snap.items[i].meta, flt) for i in snap.ids),
                dtype=bool,
                count=len(snap.ids),
            )
        return scores, allowed

    def search_topk(self, query, k: int, flt: MetadataFilter = None) -> list[SearchHit]:
        """Exact top-k by cosine, score descending then chunk_id ascending."""
        if k < 1:
            raise ValueError("k must be >= 1")
        snap = self._snap
        if not snap.ids:
            return []
        q = self._prepare_query(query)
        scores, allowed = self._scan(snap, q, flt)
        n_allowed = int(allowed.sum())
        if n_allowed == 0:
            return []
        masked = np.where(allowed, scores, -np.inf)
        # Rows are already sorted by chunk_id, so a stable sort on descending
        # score yields the id tie-break for free.
        order = np.argsort(-masked, kind="stable")[: min(k, n_allowed)]
        return [self._hit(snap, int(i), scores) for i in order]

    def search_mmr(
        self,
        query,
        k: int,
        fetch_k: int,
        lam: float,
        flt: MetadataFilter = None,
    ) -> list[SearchHit]:
        """Diversified selection from the top fetch_k candidates.

        Greedy maximal marginal relevance: the first pick is the most
        relevant candidate; each later pick maximizes
        lam * cos(query, d) - (1 - lam) * max cos(d, selected).
        """
        if not 0.0 <= lam <= 1.0:
            raise ValueError("lambda must be in [0, 1]")
        if k < 1 or k > fetch_k:
            raise ValueError("need 1 <= k <= fetch_k")
        snap = self._snap
        if not snap.ids:
            return []
        q = self._prepare_query(query)
        scores, allowed = self._scan(snap, q, flt)
        n_allowed = int(allowed.sum())
        if n_allowed == 0:
            return []
        masked = np.where(allowed, scores, -np.inf)
        pool = np.argsort(-masked, kind="stable")[: min(fetch_k, n_allowed)]

        cand = np.ascontiguousarray(snap.matrix[pool])
        rel = scores[pool]
        pool_ids = [snap.ids[int(i)] for i in pool]
        tie_rank = np.empty(len(pool), dtype=np.int64)
        for rank_pos, cand_pos in enumerate(sorted(range(len(pool)), key=pool_ids.__getitem__)):
            tie_rank[cand_pos] = rank_pos

        chosen = kernels.mmr_select(cand, rel, float(lam), min(k, len(pool)), tie_rank)
        return [self._hit(snap, int(pool[int(c)]), scores) for c in chosen]

    def _hit(self, snap: _Snapshot, row: int, scores: np.ndarray) -> SearchHit:
        cid = snap.ids[row]
        return SearchHit(
            chunk_id=cid,
            score=float(np.clip(scores[row], -1.0, 1.0)),
            chunk=snap.items[cid],
        )

    # -- persistence ---------------------------------------------------

    def persist(self, path: Path | str) -> None:
        """Write the store to a single checksummed file (atomic replace)."""
        snap = self._snap
        parts = [MAGIC, struct.pack("<IIQ", VERSION, self._dim, len(snap.ids))]
        for cid in snap.ids:
            item = snap.items[cid]
            body = b"".join(
                _pack_str(s)
                for s in (
                    cid,
                    item.meta.taxon_rank,
                    item.meta.source,
                    item.meta.taxon_name,
                    item.contextual_text,
                    item.text,
                )
            ) + item.vector.astype("<f4").tobytes()
            parts.append(struct.pack("<I", len(body)))
            parts.append(body)
        blob = b"".join(parts)
        blob += struct.pack("<I", binascii.crc32(blob) & 0xFFFFFFFF)
        tmp = str(path) + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: Path | str) -> "VectorStore":
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) < len(MAGIC) + 16 + 4:
            raise StoreFormatError(f"{path}: file too short")
        body, (stored_crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
        if binascii.crc32(body) & 0xFFFFFFFF != stored_crc:
            raise StoreChecksumError(f"{path}: checksum mismatch")
        if body[: len(MAGIC)] != MAGIC:
            raise StoreFormatError(f"{path}: bad magic")
        version, dim, count = struct.unpack_from("<IIQ", body, len(MAGIC))
        if version != VERSION:
            raise StoreFormatError(f"{path}: unsupported version {version}")
        store = cls(dim=dim)
        offset = len(MAGIC) + 16
        items: dict[str, StoredChunk] = {}
        for _ in range(count):
            if offset + 4 > len(body):
                raise StoreFormatError(f"{path}: truncated record table")
            (rec_len,) = struct.unpack_from("<I", body, offset)
            offset += 4
            end = offset + rec_len
            if end > len(body):
                raise StoreFormatError(f"{path}: truncated record")
            fields = []
            for _ in range(6):
                value, offset = _unpack_str(body, offset, end, path)
                fields.append(value)
            vec_bytes = dim * 4
            if offset + vec_bytes != end:
                raise StoreFormatError(f"{path}: record length mismatch")
            vector = np.frombuffer(body, dtype="<f4", count=dim, offset=offset).copy()
            offset = end
            cid, taxon_rank, source, taxon_name, contextual_text, text = fields
            items[cid] = StoredChunk(
                chunk_id=cid,
                meta=ChunkMeta(taxon_rank=taxon_rank, source=source, taxon_name=taxon_name),
                contextual_text=contextual_text,
                text=text,
                vector=vector,
            )
        if offset != len(body):
            raise StoreFormatError(f"{path}: trailing bytes after records")
        if len(items) != count:
            raise StoreFormatError(f"{path}: duplicate chunk ids")
        store._snap = store._build_snapshot(items)
        return store


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _unpack_str(blob: bytes, offset: int, end: int, path) -> tuple[str, int]:
    if offset + 4 > end:
        raise StoreFormatError(f"{path}: truncated string length")
    (length,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if offset + length > end:
        raise StoreFormatError(f"{path}: truncated string payload")
    try:
        value = blob[offset : offset + length].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise StoreFormatError(f"{path}: invalid UTF-8 in record") from exc
    return value, offset + length
