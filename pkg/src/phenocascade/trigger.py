"""Trigger phrase extraction: disease mentions with pre-mention cue polarity.

A trigger phrase is a disease alias occurrence labeled Positive, Negative, or
Uncertain by the nearest cue in a short window before it, never crossing a
sentence boundary. Both the rule stage and the model's word channel are built
from these phrases.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataFormatError
from .preprocess import TOKEN_RE, TokenizedText


class Polarity(Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    UNCERTAIN = "uncertain"


def _validate_token_sequences(patterns: Iterable[Sequence[str]], what: str) -> tuple[tuple[str, ...], ...]:
    out = []
    for pattern in patterns:
        seq = tuple(pattern)
        if not seq or any(not token for token in seq):
            raise DataFormatError(f"{what} contains an empty pattern")
        if any(token != token.lower() for token in seq):
            raise DataFormatError(f"{what} pattern {' '.join(seq)!r} must be lowercase")
        out.append(seq)
    return tuple(out)


@dataclass(frozen=True)
class DiseaseLexicon:
    """One disease plus every token sequence that counts as a mention of it."""

    disease: str
    aliases: tuple[tuple[str, ...], ...]

    def __post_init__(self) -> None:
        if not self.disease:
            raise DataFormatError("disease name must be non-empty")
        if not self.aliases:
            raise DataFormatError(f"disease {self.disease!r} has no aliases")
        object.__setattr__(self, "aliases", _validate_token_sequences(self.aliases, f"disease {self.disease!r}"))


@dataclass(frozen=True)
class CueLexicon:
    """Negation and uncertainty cue patterns plus the pre-mention scope window."""

    negation_cues: tuple[tuple[str, ...], ...]
    uncertainty_cues: tuple[tuple[str, ...], ...]
    scope_window: int = 6

    def __post_init__(self) -> None:
        object.__setattr__(self, "negation_cues", _validate_token_sequences(self.negation_cues, "negation cues"))
        object.__setattr__(
            self, "uncertainty_cues", _validate_token_sequences(self.uncertainty_cues, "uncertainty cues")
        )
        overlap = set(self.negation_cues) & set(self.uncertainty_cues)
        if overlap:
            listing = ", ".join(" ".join(cue) for cue in sorted(overlap))
            raise DataFormatError(f"cues listed as both negation and uncertainty: {listing}")
        if self.scope_window < 1:
            raise DataFormatError("scope_window must be at least 1")


@dataclass(frozen=True)
class TriggerPhrase:
    """A disease mention with its polarity and, for non-positive ones, the cue."""

    disease: str
    polarity: Polarity
    mention_span: tuple[int, int]
    cue_span: tuple[int, int] | None
    surface: str

    def __post_init__(self) -> None:
        if (self.polarity is Polarity.POSITIVE) != (self.cue_span is None):
            raise DataFormatError("positive triggers carry no cue span; others must carry one")


def _lower_tokens(tok: TokenizedText) -> list[str]:
    return [t.lower() for t in tok.tokens]


def _matches_at(tokens: Sequence[str], pos: int, pattern: tuple[str, ...], limit: int) -> bool:
    end = pos + len(pattern)
    if end > limit:
        return False
    return tuple(tokens[pos:end]) == pattern


def _greedy_mention_spans(
    tokens: Sequence[str], bounds: Sequence[tuple[int, int]], aliases: tuple[tuple[str, ...], ...]
) -> list[tuple[int, int]]:
    """Leftmost-longest alias occurrences, greedy and sentence-bounded.

    At each position the longest matching alias wins (earlier lexicon entry on
    equal length); matched tokens are consumed so overlapping occurrences
    collapse into one.
    """
    ordered = sorted(range(len(aliases)), key=lambda i: (-len(aliases[i]), i))
    spans: list[tuple[int, int]] = []
    for sent_start, sent_end in bounds:
        pos = sent_start
        while pos < sent_end:
            for i in ordered:
                alias = aliases[i]
                if _matches_at(tokens, pos, alias, sent_end):
                    spans.append((pos, pos + len(alias)))
                    pos += len(alias)
                    break
            else:
                pos += 1
    return spans


def _cue_occurrences(
    tokens: Sequence[str], bounds: Sequence[tuple[int, int]], cues: CueLexicon
) -> list[tuple[int, int, bool]]:
    """Every cue occurrence as (start, end, is_negation); overlaps allowed."""
    occurrences: list[tuple[int, int, bool]] = []
    for sent_start, sent_end in bounds:
        for pos in range(sent_start, sent_end):
            for cue in cues.negation_cues:
                if _matches_at(tokens, pos, cue, sent_end):
                    occurrences.append((pos, pos + len(cue), True))
            for cue in cues.uncertainty_cues:
                if _matches_at(tokens, pos, cue, sent_end):
                    occurrences.append((pos, pos + len(cue), False))
    return occurrences


def _scoped_cue(
    occurrences: Sequence[tuple[int, int, bool]], mention_start: int, sent_start: int, window: int
) -> tuple[int, int, bool] | None:
    """The governing cue for a mention, if any.

    A cue is in scope when it lies entirely within the `window` tokens before
    the mention and inside the mention's sentence. The nearest cue (largest
    end) governs; on a tie negation beats uncertainty, then the later start
    (shorter cue) wins.
    """
    best: tuple[int, bool, int] | None = None
    for cue_start, cue_end, is_negation in occurrences:
        if cue_end > mention_start or cue_start < mention_start - window or cue_start < sent_start:
            continue
        key = (cue_end, is_negation, cue_start)
        if best is None or key > best:
            best = key
    if best is None:
        return None
    return (best[2], best[0], best[1])


def find_trigger_phrases(tok: TokenizedText, lex: DiseaseLexicon, cues: CueLexicon) -> list[TriggerPhrase]:
    """All trigger phrases for one disease, in document order."""
    tokens = _lower_tokens(tok)
    occurrences = _cue_occurrences(tokens, tok.sentence_bounds, cues)
    triggers: list[TriggerPhrase] = []
    for mention_start, mention_end in _greedy_mention_spans(tokens, tok.sentence_bounds, lex.aliases):
        sent_start, _ = tok.sentence_range(mention_start)
        surface = tok.text[tok.spans[mention_start][0] : tok.spans[mention_end - 1][1]]
        cue = _scoped_cue(occurrences, mention_start, sent_start, cues.scope_window)
        if cue is None:
            polarity, cue_span = Polarity.POSITIVE, None
        else:
            cue_start, cue_end, is_negation = cue
            polarity = Polarity.NEGATIVE if is_negation else Polarity.UNCERTAIN
            cue_span = (cue_start, cue_end)
        triggers.append(
            TriggerPhrase(
                disease=lex.disease,
                polarity=polarity,
                mention_span=(mention_start, mention_end),
                cue_span=cue_span,
                surface=surface,
            )
        )
    return triggers


def find_all_trigger_phrases(
    tok: TokenizedText, lexicons: Iterable[DiseaseLexicon], cues: CueLexicon
) -> list[TriggerPhrase]:
    """Trigger phrases for every disease, grouped by lexicon order."""
    triggers: list[TriggerPhrase] = []
    for lex in lexicons:
        triggers.extend(find_trigger_phrases(tok, lex, cues))
    return triggers


def positive_trigger_tokens(triggers: Iterable[TriggerPhrase], tok: TokenizedText) -> list[str]:
    """Tokens inside Positive mention spans, in document order, lowercased.

    Lowercasing matches the embedding vocabularies, which store surface forms
    in lowercase.
    """
    spans = sorted(t.mention_span for t in triggers if t.polarity is Polarity.POSITIVE)
    out: list[str] = []
    for start, end in spans:
        out.extend(token.lower() for token in tok.tokens[start:end])
    return out


@dataclass(frozen=True)
class PolaritySummary:
    """Existential polarity flags for one disease's triggers."""

    has_positive: bool = False
    has_negative: bool = False
    has_uncertain: bool = False


def polarity_summary(triggers: Iterable[TriggerPhrase]) -> dict[str, PolaritySummary]:
    """Per-disease polarity flags; diseases absent from the map have all-false flags."""
    flags: dict[str, list[bool]] = {}
    for trigger in triggers:
        entry = flags.setdefault(trigger.disease, [False, False, False])
        if trigger.polarity is Polarity.POSITIVE:
            entry[0] = True
        elif trigger.polarity is Polarity.NEGATIVE:
            entry[1] = True
        else:
            entry[2] = True
    return {
        disease: PolaritySummary(has_positive=e[0], has_negative=e[1], has_uncertain=e[2])
        for disease, e in flags.items()
    }


def _pattern_tokens(raw: str, source: str, lineno: int) -> tuple[str, ...]:
    tokens = tuple(t.lower() for t in TOKEN_RE.findall(raw))
    if not tokens:
        raise DataFormatError(f"pattern {raw!r} has no tokens", source=source, line=lineno)
    return tokens


def load_disease_lexicons(path: str | Path) -> list[DiseaseLexicon]:
    """Read a TSV of `disease<TAB>alias|alias|...`.

    Aliases are tokenized with the text tokenizer so multi-word and
    hyphenated forms match exactly the way note text does. The disease name
    itself is only matched if listed as one of its aliases.
    """
    source = str(path)
    lexicons: list[DiseaseLexicon] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataFormatError("expected 'disease<TAB>alias|alias|...'", source=source, line=lineno)
            disease, alias_field = parts
            if disease in seen:
                raise DataFormatError(f"duplicate disease {disease!r}", source=source, line=lineno)
            seen.add(disease)
            aliases = tuple(
                _pattern_tokens(alias, source, lineno) for alias in alias_field.split("|") if alias.strip()
            )
            lexicons.append(DiseaseLexicon(disease=disease, aliases=aliases))
    return lexicons


_SECTION_RE = re.compile(r"^\[(negation|uncertainty)\]$")


def load_cue_lexicon(path: str | Path, scope_window: int = 6) -> CueLexicon:
    """Read cue patterns from a sectioned text file.

    The file holds `[negation]` and `[uncertainty]` sections with one cue per
    line; multi-token cues are written with spaces ("rule out"). Lines outside
    a section are an error.
    """
    source = str(path)
    sections: dict[str, list[tuple[str, ...]]] = {"negation": [], "uncertainty": []}
    current: str | None = None
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            section = _SECTION_RE.match(line)
            if section:
                current = section.group(1)
                continue
            if current is None:
                raise DataFormatError("cue line before any [negation]/[uncertainty] section", source=source, line=lineno)
            sections[current].append(_pattern_tokens(line, source, lineno))
    return CueLexicon(
        negation_cues=tuple(sections["negation"]),
        uncertainty_cues=tuple(sections["uncertainty"]),
        scope_window=scope_window,
    )
