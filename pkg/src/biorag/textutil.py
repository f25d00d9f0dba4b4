"""Small text helpers used by several modules."""

from __future__ import annotations

import re
import unicodedata

_SENTENCE_BOUNDARY = re.compile(r"(?<=[.!?])\s+")
_WS = re.compile(r"\s+")


def canonical_taxon(name: str) -> str:
    """Canonical stored form of a taxon name: NFC, control chars removed, trimmed."""
    cleaned = "".join(ch for ch in name if not unicodedata.category(ch).startswith("C"))
    return unicodedata.normalize("NFC", cleaned).strip()


def taxon_key(name: str) -> str:
    """Comparison key for taxon names (canonical form, case-insensitive)."""
    return canonical_taxon(name).casefold()


def collapse_ws(text: str) -> str:
    """Collapse all whitespace runs to single spaces and trim."""
    return _WS.sub(" ", text).strip()


def split_sentences(text: str) -> list[str]:
    """Split text into sentences on terminal punctuation followed by whitespace.

    Deliberately simple and deterministic; good enough for claim and question
    generation over generated prose.
    """
    parts = [p.strip() for p in _SENTENCE_BOUNDARY.split(text)]
    return [p for p in parts if p]
