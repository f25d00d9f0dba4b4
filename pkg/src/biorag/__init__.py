"""biorag: organism images to rank-wise taxonomic classifications.

Captioning, retrieval over an embedded vector store of encyclopedia chunks,
abstention-aware response generation, and an evaluation suite. Every stage
runs offline against deterministic mock providers.
"""

from .taxonomy import Classification, GroundTruthLabel, Rank, compare_ranks, enforce_prefix
from .vectorstore import SearchHit, StoredChunk, VectorStore, cosine, normalize

__version__ = "0.1.0"

__all__ = [
    "Classification",
    "GroundTruthLabel",
    "Rank",
    "compare_ranks",
    "enforce_prefix",
    "SearchHit",
    "StoredChunk",
    "VectorStore",
    "cosine",
    "normalize",
    "__version__",
]
