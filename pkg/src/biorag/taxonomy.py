"""Taxonomic rank ladder and prefix-closed classifications.

A classification is a contiguous prefix of the seven-rank ladder (Kingdom
down to Species). Models are allowed to abstain below any rank, so the type
enforces that an entry at some rank implies entries at every rank above it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Literal, Mapping

from .textutil import canonical_taxon, taxon_key


class Rank(Enum):
    """One of the seven ordered ranks, Kingdom highest."""

    KINGDOM = "Kingdom"
    PHYLUM = "Phylum"
    CLASS = "Class"
    ORDER = "Order"
    FAMILY = "Family"
    GENUS = "Genus"
    SPECIES = "Species"

    @property
    def depth(self) -> int:
        """0 for Kingdom through 6 for Species."""
        return _DEPTH[self]

    def is_above(self, other: "Rank") -> bool:
        return self.depth < other.depth

    @classmethod
    def parse(cls, label: str) -> "Rank":
        try:
            return _BY_LABEL[label.strip().casefold()]
        except KeyError:
            raise ValueError(f"unknown taxonomic rank: {label!r}") from None


#: All ranks from highest (Kingdom) to lowest (Species).
RANKS: tuple[Rank, ...] = tuple(Rank)

_DEPTH = {rank: i for i, rank in enumerate(RANKS)}
_BY_LABEL = {rank.value.casefold(): rank for rank in RANKS}


def compare_ranks(a: Rank, b: Rank) -> Literal["higher", "equal", "lower"]:
    """Position of rank ``a`` relative to rank ``b`` in the ladder."""
    if a.depth < b.depth:
        return "higher"
    if a.depth > b.depth:
        return "lower"
    return "equal"


def names_match(a: str, b: str) -> bool:
    """Compare taxon names for scoring: trimmed, NFC-normalized, case-insensitive."""
    return taxon_key(a) == taxon_key(b)


@dataclass(frozen=True)
class Classification:
    """An ordered, prefix-closed run of (rank, taxon name) entries.

    ``entries`` runs from Kingdom downward with no gaps; an empty tuple is a
    full abstention. Construct via :func:`enforce_prefix` when the input may
    contain gaps or junk.
    """

    entries: tuple[tuple[Rank, str], ...] = ()

    def __post_init__(self) -> None:
        for i, (rank, name) in enumerate(self.entries):
            if rank is not RANKS[i]:
                raise ValueError(
                    f"entries must run from Kingdom down with no gaps; "
                    f"position {i} holds {rank.value}"
                )
            if canonical_taxon(name) != name or not name:
                raise ValueError(f"taxon name not in canonical form: {name!r}")

    @property
    def deepest_rank(self) -> Rank | None:
        """Deepest classified rank, or None when fully abstained."""
        if not self.entries:
            return None
        return self.entries[-1][0]

    def has(self, rank: Rank) -> bool:
        return rank.depth < len(self.entries)

    def name_at(self, rank: Rank) -> str | None:
        if not self.has(rank):
            return None
        return self.entries[rank.depth][1]

    def to_records(self) -> list[dict[str, str]]:
        """JSON-friendly ordered form."""
        return [{"rank": r.value, "name": n} for r, n in self.entries]

    @classmethod
    def from_records(cls, records: Iterable[Mapping[str, str]]) -> "Classification":
        raw = {rec["rank"]: rec["name"] for rec in records}
        result, dropped = enforce_prefix(raw)
        if dropped:
            raise ValueError(f"classification records are not prefix-closed: drops {dropped}")
        return result


def enforce_prefix(
    raw: Mapping[Rank | str, str],
) -> tuple[Classification, list[tuple[Rank, str]]]:
    """Repair a possibly gappy rank-to-name mapping into a valid Classification.

    Walks Kingdom downward and truncates at the first rank with no usable
    entry; everything below the gap is returned in the dropped list. Names
    that are empty after canonicalization count as missing. Total: never
    raises for any string-valued input.
    """
    by_rank: dict[Rank, str] = {}
    for key, value in raw.items():
        rank = key if isinstance(key, Rank) else Rank.parse(key)
        by_rank[rank] = canonical_taxon(value)

    entries: list[tuple[Rank, str]] = []
    dropped: list[tuple[Rank, str]] = []
    truncated = False
    for rank in RANKS:
        name = by_rank.get(rank, "")
        if truncated or not name:
            truncated = True
            if name:
                dropped.append((rank, name))
            continue
        entries.append((rank, name))
    return Classification(tuple(entries)), dropped


@dataclass(frozen=True)
class GroundTruthLabel:
    """Reference labels for one sample, complete down to Species.

    ``names`` must be gap-free from its highest rank (Kingdom or Phylum)
    down to Species. ``n_obs`` is an optional observation count used by the
    rare/common split.
    """

    sample_id: str
    names: Mapping[Rank, str] = field(default_factory=dict)
    n_obs: int | None = None

    def __post_init__(self) -> None:
        if not self.sample_id.strip():
            raise ValueError("sample_id must be non-empty")
        present = [rank for rank in RANKS if rank in self.names]
        if not present or present[-1] is not Rank.SPECIES:
            raise ValueError(f"label {self.sample_id}: must reach Species")
        if present[0] not in (Rank.KINGDOM, Rank.PHYLUM):
            raise ValueError(f"label {self.sample_id}: must start at Kingdom or Phylum")
        for prev, cur in zip(present, present[1:]):
            if cur.depth != prev.depth + 1:
                raise ValueError(
                    f"label {self.sample_id}: gap between {prev.value} and {cur.value}"
                )
        for rank in present:
            if not canonical_taxon(self.names[rank]):
                raise ValueError(f"label {self.sample_id}: empty name at {rank.value}")
        if self.n_obs is not None and self.n_obs < 0:
            raise ValueError(f"label {self.sample_id}: negative n_obs")

    def name_at(self, rank: Rank) -> str | None:
        return self.names.get(rank)

    @classmethod
    def from_record(cls, record: Mapping) -> "GroundTruthLabel":
        names = {
            Rank.parse(label): str(name)
            for label, name in dict(record["classification"]).items()
        }
        n_obs = record.get("n_obs")
        return cls(
            sample_id=str(record["sample_id"]),
            names=names,
            n_obs=None if n_obs is None else int(n_obs),
        )
