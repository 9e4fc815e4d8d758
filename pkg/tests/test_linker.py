"""Concept linking: longest match, occurrence counting, semantic-type filtering."""

import random

import pytest

from phenocascade.errors import DataFormatError
from phenocascade.linker import (
    DEFAULT_TUI_WHITELIST,
    ConceptBag,
    ConceptEntry,
    filter_by_tui,
    link_concepts,
    load_concept_dictionary,
)
from phenocascade.preprocess import tokenize

DICT = [
    ConceptEntry(cui="C0011849", tui="T047", names=(("diabetes", "mellitus"),)),
    ConceptEntry(cui="C0011847", tui="T047", names=(("diabetes",),)),
    ConceptEntry(cui="C0028754", tui="T047", names=(("obesity",), ("obese",))),
    ConceptEntry(cui="C0021641", tui="T121", names=(("insulin",),)),
    ConceptEntry(cui="C0008031", tui="T184", names=(("chest", "pain"),)),
    ConceptEntry(cui="C9999999", tui="T999", names=(("review", "of", "systems"),)),
]


def test_longest_match_suppresses_substring():
    bag = link_concepts(tokenize("diabetes mellitus"), DICT)
    assert bag.entries == (("C0011849", 1),)


def test_empty_dictionary_empty_bag():
    assert link_concepts(tokenize("anything at all"), []).entries == ()


def test_counts_accumulate():
    text = "obesity noted. obesity discussed. morbid obesity"
    bag = link_concepts(tokenize(text), DICT)

    # Oracle: count non-overlapping "obesity" occurrences by hand over tokens.
    tokens = [t.lower() for t in tokenize(text).tokens]
    expected = sum(1 for t in tokens if t == "obesity")
    assert dict(bag.entries)["C0028754"] == expected == 3


def test_first_occurrence_order():
    bag = link_concepts(tokenize("insulin for diabetes and obesity, insulin again"), DICT)
    assert bag.cuis() == ["C0021641", "C0011847", "C0028754"]
    assert dict(bag.entries)["C0021641"] == 2


def test_synonyms_share_one_cui():
    bag = link_concepts(tokenize("obese patient with obesity"), DICT)
    assert dict(bag.entries)["C0028754"] == 2


def test_matching_is_case_insensitive():
    bag = link_concepts(tokenize("CHEST PAIN resolved"), DICT)
    assert bag.cuis() == ["C0008031"]


def test_filter_by_tui_drops_non_whitelisted():
    bag = link_concepts(tokenize("review of systems: chest pain, insulin"), DICT)
    filtered = filter_by_tui(bag, DICT, DEFAULT_TUI_WHITELIST)
    assert filtered.cuis() == ["C0008031", "C0021641"]


def test_filter_by_tui_empty_whitelist():
    bag = link_concepts(tokenize("insulin"), DICT)
    assert filter_by_tui(bag, DICT, frozenset()).entries == ()


def test_filter_by_tui_universal_whitelist_is_identity():
    bag = link_concepts(tokenize("review of systems: diabetes mellitus, insulin, chest pain"), DICT)
    universal = frozenset(entry.tui for entry in DICT)
    assert filter_by_tui(bag, DICT, universal) == bag


def test_filter_by_tui_keeps_sign_or_symptom():
    bag = link_concepts(tokenize("chest pain"), DICT)
    assert filter_by_tui(bag, DICT).cuis() == ["C0008031"]
    assert "T184" in DEFAULT_TUI_WHITELIST


def test_filter_by_tui_unknown_cui_named_in_error():
    bag = ConceptBag(entries=(("C7777777", 1),))
    with pytest.raises(DataFormatError, match="C7777777"):
        filter_by_tui(bag, DICT)


def test_default_whitelist_contents():
    assert DEFAULT_TUI_WHITELIST == frozenset(
        {"T023", "T033", "T034", "T047", "T048", "T049", "T059", "T060", "T061", "T121", "T122", "T123", "T184"}
    )


def test_counts_match_brute_force_on_random_text():
    entries = [
        ConceptEntry(cui="C0000001", tui="T047", names=(("alpha", "beta"),)),
        ConceptEntry(cui="C0000002", tui="T047", names=(("alpha",),)),
        ConceptEntry(cui="C0000003", tui="T047", names=(("beta",), ("gamma",))),
    ]
    rng = random.Random(77)
    vocab = ["alpha", "beta", "gamma", "delta", "filler"]
    for _ in range(200):
        tokens = [rng.choice(vocab) for _ in range(rng.randint(0, 15))]
        text = " ".join(tokens)
        bag = link_concepts(tokenize(text), entries)

        # Oracle: greedy scan re-implemented directly over the token list.
        expected: dict[str, int] = {}
        pos = 0
        while pos < len(tokens):
            if tokens[pos] == "alpha" and pos + 1 < len(tokens) and tokens[pos + 1] == "beta":
                expected["C0000001"] = expected.get("C0000001", 0) + 1
                pos += 2
            elif tokens[pos] == "alpha":
                expected["C0000002"] = expected.get("C0000002", 0) + 1
                pos += 1
            elif tokens[pos] in ("beta", "gamma"):
                expected["C0000003"] = expected.get("C0000003", 0) + 1
                pos += 1
            else:
                pos += 1
        assert dict(bag.entries) == expected


def test_concept_bag_validation():
    with pytest.raises(DataFormatError, match="repeats"):
        ConceptBag(entries=(("C1", 1), ("C1", 2)))
    with pytest.raises(DataFormatError, match="positive"):
        ConceptBag(entries=(("C1", 0),))


def test_concept_entry_validation():
    with pytest.raises(DataFormatError, match="tui"):
        ConceptEntry(cui="C1", tui="X47", names=(("a",),))
    with pytest.raises(DataFormatError, match="names"):
        ConceptEntry(cui="C1", tui="T047", names=())


def test_load_concept_dictionary(tmp_path):
    path = tmp_path / "concepts.tsv"
    path.write_text(
        "# dictionary\n"
        "C0011849\tT047\tdiabetes mellitus|dm type two\n"
        "C0021641\tT121\tinsulin\n"
    )
    entries = load_concept_dictionary(path)
    assert [e.cui for e in entries] == ["C0011849", "C0021641"]
    assert entries[0].names == (("diabetes", "mellitus"), ("dm", "type", "two"))


def test_load_concept_dictionary_rejects_duplicates(tmp_path):
    path = tmp_path / "concepts.tsv"
    path.write_text("C1\tT047\ta\nC1\tT047\tb\n")
    with pytest.raises(DataFormatError, match="duplicate cui"):
        load_concept_dictionary(path)


def test_load_concept_dictionary_rejects_bad_rows(tmp_path):
    path = tmp_path / "concepts.tsv"
    path.write_text("C1\tT047\n")
    with pytest.raises(DataFormatError, match="line 1"):
        load_concept_dictionary(path)
