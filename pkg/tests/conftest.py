"""Shared test helpers: brute-force oracles and tiny corpus builders.

Oracles here are deliberately naive re-derivations of documented contracts,
written without reference to the package internals they check.
"""

from __future__ import annotations

import random

from phenocascade.preprocess import TokenizedText
from phenocascade.trigger import CueLexicon, DiseaseLexicon, Polarity, TriggerPhrase

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(name: str, ok: bool, detail: str) -> None:
    """Collect one acceptance verdict; the terminal summary replays them all."""
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


def oracle_trigger_phrases(tok: TokenizedText, lex: DiseaseLexicon, cues: CueLexicon) -> list[TriggerPhrase]:
    """Quadratic re-derivation of trigger extraction.

    Enumerates every alias occurrence, resolves maximal leftmost-longest
    matches by repeated selection, then scores every cue occurrence against
    the window and sentence conditions for each mention.
    """
    tokens = [t.lower() for t in tok.tokens]

    def occurrences(patterns):
        found = []
        for sent_start, sent_end in tok.sentence_bounds:
            for pos in range(sent_start, sent_end):
                for pattern in patterns:
                    end = pos + len(pattern)
                    if end <= sent_end and tuple(tokens[pos:end]) == pattern:
                        found.append((pos, end, pattern))
        return found

    # Maximal leftmost-longest: repeatedly take the earliest-starting match,
    # longest on ties, and discard everything it overlaps.
    remaining = sorted({(s, e) for s, e, _ in occurrences(lex.aliases)})
    mentions = []
    while remaining:
        first_start = min(s for s, _ in remaining)
        best = max((m for m in remaining if m[0] == first_start), key=lambda m: m[1])
        mentions.append(best)
        remaining = [m for m in remaining if m[0] >= best[1]]

    cue_hits = [(s, e, True) for s, e, _ in occurrences(cues.negation_cues)]
    cue_hits += [(s, e, False) for s, e, _ in occurrences(cues.uncertainty_cues)]

    triggers = []
    for ms, me in sorted(mentions):
        sent_start, sent_end = tok.sentence_range(ms)
        in_scope = [
            (ce, neg, cs)
            for cs, ce, neg in cue_hits
            if ce <= ms and cs >= ms - cues.scope_window and cs >= sent_start
        ]
        if not in_scope:
            polarity, cue_span = Polarity.POSITIVE, None
        else:
            ce, neg, cs = max(in_scope)
            polarity = Polarity.NEGATIVE if neg else Polarity.UNCERTAIN
            cue_span = (cs, ce)
        triggers.append(
            TriggerPhrase(
                disease=lex.disease,
                polarity=polarity,
                mention_span=(ms, me),
                cue_span=cue_span,
                surface=tok.text[tok.spans[ms][0] : tok.spans[me - 1][1]],
            )
        )
    return triggers


# Vocabulary designed to collide: overlapping aliases, multi-token cues, and
# filler words that prefix alias tokens.
FUZZ_LEXICON = DiseaseLexicon(
    disease="Diabetes",
    aliases=(
        ("diabetes",),
        ("diabetes", "mellitus"),
        ("sugar", "disease"),
    ),
)
FUZZ_CUES = CueLexicon(
    negation_cues=(("no",), ("not",), ("denies",), ("without",)),
    uncertainty_cues=(("possible",), ("may",), ("rule", "out"), ("can", "not")),
    scope_window=4,
)
_FUZZ_WORDS = [
    "diabetes",
    "mellitus",
    "sugar",
    "disease",
    "no",
    "not",
    "denies",
    "without",
    "possible",
    "may",
    "rule",
    "out",
    "can",
    "patient",
    "has",
    "stable",
    "the",
]


def random_cue_sentences(rng: random.Random, max_tokens: int = 12) -> str:
    """A short multi-sentence text sampled from the collision-prone vocabulary."""
    n_sentences = rng.randint(1, 3)
    sentences = []
    for _ in range(n_sentences):
        n = rng.randint(1, max_tokens)
        sentences.append(" ".join(rng.choice(_FUZZ_WORDS) for _ in range(n)) + ".")
    return " ".join(sentences)
