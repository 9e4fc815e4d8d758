"""Text normalization ahead of trigger search and concept linking.

The pipeline is: strip family-history content, expand abbreviations, then
tokenize with sentence boundaries. Token spans always index into the text
the tokenizer was given, so downstream consumers can re-slice the original
string.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataFormatError

# A token is one or more alphanumeric atoms joined by hyphens; an atom may
# also be a decimal/dotted number (1.5, 120.80). Everything else separates.
_ATOM = r"(?:\d+(?:\.\d+)+|[A-Za-z0-9]+)"
TOKEN_RE = re.compile(rf"{_ATOM}(?:-{_ATOM})*")

# Uppercase section headers at line start, e.g. "FAMILY HISTORY:" or
# "MEDICATIONS ON ADMISSION:".
_HEADER_RE = re.compile(r"^[A-Z][A-Z /&\-]{2,}:", re.MULTILINE)
_BLANK_GAP_RE = re.compile(r"(?:[ \t\r]*\n){2,}")
_SENTENCE_END_RE = re.compile(r"[.!?]")

DEFAULT_FAMILY_KEYWORDS: frozenset[str] = frozenset(
    {
        "family",
        "mother",
        "father",
        "brother",
        "sister",
        "son",
        "daughter",
        "grandmother",
        "grandfather",
        "aunt",
        "uncle",
    }
)

_FAMILY_HEADER_RE = re.compile(r"^FAMILY\s+HISTORY\b[^\n:]*:?", re.IGNORECASE | re.MULTILINE)


@dataclass(frozen=True)
class TokenizedText:
    """Tokens of a text with character spans and sentence boundaries.

    `spans[i]` is the (start, end) character range of `tokens[i]` in `text`;
    `sentence_bounds` partitions the token indices into half-open ranges, one
    per sentence-like chunk.
    """

    text: str
    tokens: tuple[str, ...]
    spans: tuple[tuple[int, int], ...]
    sentence_bounds: tuple[tuple[int, int], ...]
    _sentence_of: tuple[int, ...] = field(repr=False, default=())

    def __post_init__(self) -> None:
        lookup = [0] * len(self.tokens)
        for sent_idx, (start, end) in enumerate(self.sentence_bounds):
            for pos in range(start, end):
                lookup[pos] = sent_idx
        object.__setattr__(self, "_sentence_of", tuple(lookup))

    def sentence_index(self, token_pos: int) -> int:
        """Sentence number containing the token at `token_pos`."""
        return self._sentence_of[token_pos]

    def sentence_range(self, token_pos: int) -> tuple[int, int]:
        """Token-index range of the sentence containing `token_pos`."""
        return self.sentence_bounds[self.sentence_index(token_pos)]


def _sentence_char_cuts(text: str) -> list[int]:
    """Character positions where a new sentence-like chunk starts.

    Cuts fall after terminal punctuation that is not inside a token (so the
    dot in "1.5" never splits), after blank-line gaps, and before section
    headers. Position 0 is always a cut.
    """
    token_spans = [m.span() for m in TOKEN_RE.finditer(text)]

    def inside_token(pos: int) -> bool:
        for start, end in token_spans:
            if start <= pos < end:
                return True
            if start > pos:
                break
        return False

    cuts = {0}
    for match in _SENTENCE_END_RE.finditer(text):
        if not inside_token(match.start()):
            cuts.add(match.end())
    for match in _BLANK_GAP_RE.finditer(text):
        cuts.add(match.end())
    for match in _HEADER_RE.finditer(text):
        cuts.add(match.start())
    return sorted(cuts)


def tokenize(text: str) -> TokenizedText:
    """Tokenize `text`, recording spans and sentence boundaries.

    Matching is case-preserving; callers lowercase at comparison time.
    """
    matches = list(TOKEN_RE.finditer(text))
    tokens = tuple(m.group() for m in matches)
    spans = tuple(m.span() for m in matches)

    cuts = _sentence_char_cuts(text)
    bounds: list[tuple[int, int]] = []
    token_pos = 0
    for i, cut_start in enumerate(cuts):
        cut_end = cuts[i + 1] if i + 1 < len(cuts) else len(text) + 1
        start_pos = token_pos
        while token_pos < len(spans) and spans[token_pos][0] < cut_end:
            token_pos += 1
        if token_pos > start_pos:
            bounds.append((start_pos, token_pos))
    if token_pos < len(spans):
        bounds.append((token_pos, len(spans)))
    return TokenizedText(text=text, tokens=tokens, spans=spans, sentence_bounds=tuple(bounds))


def load_abbreviations(path: str | Path) -> dict[str, str]:
    """Read a two-column TSV of abbreviation -> expansion.

    Blank lines and lines starting with '#' are skipped. Duplicate
    abbreviations are an error.
    """
    source = str(path)
    table: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise DataFormatError("expected 'abbreviation<TAB>expansion'", source=source, line=lineno)
            short, expansion = parts
            if short in table:
                raise DataFormatError(f"duplicate abbreviation {short!r}", source=source, line=lineno)
            table[short] = expansion
    return table


def expand_abbreviations(text: str, table: dict[str, str]) -> str:
    """Replace whole-token abbreviations with their expansions.

    Matching is case-sensitive (DM expands, dm does not) and applies in a
    single pass, so expansions are never re-expanded. Longer abbreviations
    win where one prefixes another.
    """
    if not table:
        return text
    keys = sorted(table, key=len, reverse=True)
    pattern = re.compile(
        r"(?<![A-Za-z0-9])(?:" + "|".join(re.escape(k) for k in keys) + r")(?![A-Za-z0-9])"
    )
    return pattern.sub(lambda m: table[m.group()], text)


def remove_family_history(text: str, keywords: frozenset[str] = DEFAULT_FAMILY_KEYWORDS) -> str:
    """Blank out family-history content so relatives' diseases cannot trigger.

    Two passes: (1) sections introduced by a FAMILY HISTORY header are
    blanked up to the next section header or blank-line gap; (2) any remaining
    sentence chunk containing a family keyword as a whole token is blanked.
    Characters are
    replaced with spaces (newlines kept), so all other char offsets are
    unchanged and the operation is idempotent.
    """
    chars = list(text)

    def blank(start: int, end: int) -> None:
        for i in range(start, end):
            if chars[i] != "\n":
                chars[i] = " "

    for match in _FAMILY_HEADER_RE.finditer(text):
        stops = [len(text)]
        next_header = _HEADER_RE.search(text, match.end())
        if next_header:
            stops.append(next_header.start())
        next_gap = _BLANK_GAP_RE.search(text, match.end())
        if next_gap:
            stops.append(next_gap.start())
        blank(match.start(), min(stops))

    intermediate = "".join(chars)
    lowered_keywords = {k.lower() for k in keywords}
    cuts = _sentence_char_cuts(intermediate)
    for i, start in enumerate(cuts):
        end = cuts[i + 1] if i + 1 < len(cuts) else len(intermediate)
        chunk = intermediate[start:end]
        chunk_tokens = {t.lower() for t in TOKEN_RE.findall(chunk)}
        if chunk_tokens & lowered_keywords:
            blank(start, end)
    return "".join(chars)


def preprocess(
    text: str,
    abbreviations: dict[str, str],
    family_keywords: frozenset[str] = DEFAULT_FAMILY_KEYWORDS,
) -> TokenizedText:
    """Full normalization: family-history removal, expansion, tokenization."""
    cleaned = remove_family_history(text, family_keywords)
    expanded = expand_abbreviations(cleaned, abbreviations)
    return tokenize(expanded)
