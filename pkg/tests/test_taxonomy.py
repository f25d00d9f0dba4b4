from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from biorag.taxonomy import (
    Classification,
    GroundTruthLabel,
    RANKS,
    Rank,
    compare_ranks,
    enforce_prefix,
    names_match,
)


class TestRank:
    def test_seven_ordered_values(self):
        assert [r.value for r in RANKS] == [
            "Kingdom", "Phylum", "Class", "Order", "Family", "Genus", "Species",
        ]

    def test_parse_case_insensitive(self):
        assert Rank.parse("genus") is Rank.GENUS
        assert Rank.parse(" Kingdom ") is Rank.KINGDOM

    def test_parse_rejects_unknown(self):
        with pytest.raises(ValueError):
            Rank.parse("Subfamily")

    def test_compare_extremes(self):
        assert compare_ranks(Rank.KINGDOM, Rank.SPECIES) == "higher"

    def test_compare_reflexive(self):
        assert compare_ranks(Rank.ORDER, Rank.ORDER) == "equal"

    def test_compare_adjacent(self):
        assert compare_ranks(Rank.GENUS, Rank.FAMILY) == "lower"


class TestEnforcePrefix:
    def test_gap_truncates_and_reports(self):
        result, dropped = enforce_prefix(
            {"Phylum": "Arthropoda", "Class": "Insecta", "Family": "Culicidae"}
        )
        # no Kingdom entry, so everything below it is a gap
        assert result.entries == ()
        assert (Rank.PHYLUM, "Arthropoda") in dropped
        assert (Rank.FAMILY, "Culicidae") in dropped

    def test_mid_gap_truncates_at_first_missing(self):
        result, dropped = enforce_prefix(
            {
                "Kingdom": "Animalia",
                "Phylum": "Arthropoda",
                "Class": "Insecta",
                "Family": "Culicidae",
            }
        )
        assert result.deepest_rank is Rank.CLASS
        assert dropped == [(Rank.FAMILY, "Culicidae")]

    def test_genus_level_example(self):
        raw = {
            "Kingdom": "Animalia",
            "Phylum": "Arthropoda",
            "Class": "Arachnida",
            "Order": "Araneae",
            "Family": "Araneidae",
            "Genus": "Argiope",
        }
        result, dropped = enforce_prefix(raw)
        assert dropped == []
        assert result.deepest_rank is Rank.GENUS
        assert not result.has(Rank.SPECIES)
        assert result.name_at(Rank.GENUS) == "Argiope"

    def test_empty_input_is_full_abstention(self):
        result, dropped = enforce_prefix({})
        assert result.entries == ()
        assert result.deepest_rank is None
        assert dropped == []

    def test_whitespace_name_counts_as_missing(self):
        result, dropped = enforce_prefix({"Kingdom": "   ", "Phylum": "Arthropoda"})
        assert result.entries == ()
        assert dropped == [(Rank.PHYLUM, "Arthropoda")]

    def test_control_characters_stripped(self):
        result, _ = enforce_prefix({"Kingdom": "Ani\x00malia\t"})
        assert result.name_at(Rank.KINGDOM) == "Animalia"


rank_subsets = st.dictionaries(
    st.sampled_from(RANKS), st.text(min_size=0, max_size=8), max_size=7
)


@given(rank_subsets)
def test_enforce_prefix_output_is_prefix_closed(raw):
    result, _ = enforce_prefix(raw)
    for rank in RANKS:
        if result.has(rank):
            for above in RANKS[: rank.depth]:
                assert result.has(above)


@given(rank_subsets)
def test_enforce_prefix_is_idempotent(raw):
    once, _ = enforce_prefix(raw)
    twice, dropped = enforce_prefix({r: n for r, n in once.entries})
    assert twice == once
    assert dropped == []


class TestClassification:
    def test_rejects_gap_construction(self):
        with pytest.raises(ValueError):
            Classification(((Rank.PHYLUM, "Arthropoda"),))

    def test_round_trip_records(self):
        c, _ = enforce_prefix({"Kingdom": "Animalia", "Phylum": "Arthropoda"})
        assert Classification.from_records(c.to_records()) == c

    def test_names_match_is_lenient_on_case(self):
        assert names_match("ARANEAE", "araneae")
        assert not names_match("Araneae", "Diptera")


class TestGroundTruthLabel:
    FULL = {
        Rank.KINGDOM: "Animalia",
        Rank.PHYLUM: "Arthropoda",
        Rank.CLASS: "Insecta",
        Rank.ORDER: "Diptera",
        Rank.FAMILY: "Culicidae",
        Rank.GENUS: "Aedes",
        Rank.SPECIES: "Aedes aegypti",
    }

    def test_accepts_complete_label(self):
        label = GroundTruthLabel("s1", dict(self.FULL), n_obs=42)
        assert label.name_at(Rank.SPECIES) == "Aedes aegypti"

    def test_accepts_phylum_rooted_label(self):
        names = {r: n for r, n in self.FULL.items() if r is not Rank.KINGDOM}
        GroundTruthLabel("s1", names)

    def test_rejects_gap(self):
        names = {r: n for r, n in self.FULL.items() if r is not Rank.ORDER}
        with pytest.raises(ValueError):
            GroundTruthLabel("s1", names)

    def test_rejects_missing_species(self):
        names = {r: n for r, n in self.FULL.items() if r is not Rank.SPECIES}
        with pytest.raises(ValueError):
            GroundTruthLabel("s1", names)

    def test_from_record(self):
        record = {
            "sample_id": "s9",
            "classification": {r.value: n for r, n in self.FULL.items()},
            "n_obs": 100,
        }
        label = GroundTruthLabel.from_record(record)
        assert label.n_obs == 100
        assert label.name_at(Rank.GENUS) == "Aedes"
