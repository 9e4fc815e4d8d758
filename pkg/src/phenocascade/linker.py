"""Dictionary-based concept linking over the token stream.

Each record becomes an ordered bag of concept identifiers via exact greedy
matching against a concept dictionary, then narrowed to disease-relevant
semantic types. The dictionary is configuration data, so a licensed
terminology subset can be dropped in without code changes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import DataFormatError
from .preprocess import TOKEN_RE, TokenizedText

_TUI_RE = re.compile(r"^T\d{3}$")

#: Semantic types considered disease-relevant: body parts, findings, disorders,
#: procedures, chemicals/drugs, and signs or symptoms.
DEFAULT_TUI_WHITELIST: frozenset[str] = frozenset(
    {
        "T023",
        "T033",
        "T034",
        "T047",
        "T048",
        "T049",
        "T059",
        "T060",
        "T061",
        "T121",
        "T122",
        "T123",
        "T184",
    }
)


@dataclass(frozen=True)
class ConceptEntry:
    """One dictionary concept: identifier, semantic type, surface names."""

    cui: str
    tui: str
    names: tuple[tuple[str, ...], ...]

    def __post_init__(self) -> None:
        if not self.cui:
            raise DataFormatError("concept cui must be non-empty")
        if not _TUI_RE.match(self.tui):
            raise DataFormatError(f"concept {self.cui!r} has malformed tui {self.tui!r}")
        if not self.names:
            raise DataFormatError(f"concept {self.cui!r} has no names")
        for name in self.names:
            if not name or any(not t or t != t.lower() for t in name):
                raise DataFormatError(f"concept {self.cui!r} has an empty or non-lowercase name")


@dataclass(frozen=True)
class ConceptBag:
    """Unique concept ids from one record, in first-occurrence order, with counts."""

    entries: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for cui, count in self.entries:
            if cui in seen:
                raise DataFormatError(f"concept bag repeats cui {cui!r}")
            if count < 1:
                raise DataFormatError(f"concept bag count for {cui!r} must be positive")
            seen.add(cui)

    def cuis(self) -> list[str]:
        return [cui for cui, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def link_concepts(tok: TokenizedText, dictionary: Sequence[ConceptEntry]) -> ConceptBag:
    """Greedy leftmost-longest dictionary matching over the whole token stream.

    At each position the longest matching name wins; the earliest dictionary
    entry breaks length ties. Matched tokens are consumed, so shorter
    overlapping names are suppressed. Matching ignores sentence boundaries:
    dictionary phrases are short noun phrases, and a boundary implies
    non-adjacency in the original text only for the rare header-split case.
    """
    tokens = [t.lower() for t in tok.tokens]
    candidates: list[tuple[tuple[str, ...], str]] = []
    for entry in dictionary:
        for name in entry.names:
            candidates.append((name, entry.cui))
    candidates.sort(key=lambda pair: -len(pair[0]))

    counts: dict[str, int] = {}
    pos = 0
    n = len(tokens)
    while pos < n:
        for name, cui in candidates:
            end = pos + len(name)
            if end <= n and tuple(tokens[pos:end]) == name:
                counts[cui] = counts.get(cui, 0) + 1
                pos = end
                break
        else:
            pos += 1
    return ConceptBag(entries=tuple(counts.items()))


def filter_by_tui(
    bag: ConceptBag, dictionary: Sequence[ConceptEntry], whitelist: frozenset[str] = DEFAULT_TUI_WHITELIST
) -> ConceptBag:
    """Keep only concepts whose semantic type is whitelisted; order and counts intact."""
    tui_by_cui = {entry.cui: entry.tui for entry in dictionary}
    kept: list[tuple[str, int]] = []
    for cui, count in bag.entries:
        tui = tui_by_cui.get(cui)
        if tui is None:
            raise DataFormatError(f"concept {cui!r} is not in the dictionary")
        if tui in whitelist:
            kept.append((cui, count))
    return ConceptBag(entries=tuple(kept))


def load_concept_dictionary(path: str | Path) -> list[ConceptEntry]:
    """Read a dictionary of `CUI<TAB>TUI<TAB>name1|name2|...` lines.

    Names are tokenized with the text tokenizer and lowercased so matching
    behaves exactly like note text. Duplicate CUIs are an error.
    """
    source = str(path)
    entries: list[ConceptEntry] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataFormatError("expected 'CUI<TAB>TUI<TAB>name|name|...'", source=source, line=lineno)
            cui, tui, name_field = parts
            if cui in seen:
                raise DataFormatError(f"duplicate cui {cui!r}", source=source, line=lineno)
            seen.add(cui)
            names = []
            for name in name_field.split("|"):
                tokens = tuple(t.lower() for t in TOKEN_RE.findall(name))
                if not tokens:
                    raise DataFormatError(f"name {name!r} has no tokens", source=source, line=lineno)
                names.append(tokens)
            try:
                entries.append(ConceptEntry(cui=cui, tui=tui, names=tuple(names)))
            except DataFormatError as exc:
                raise DataFormatError(str(exc), source=source, line=lineno) from None
    return entries
