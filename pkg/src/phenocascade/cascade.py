"""Test-phase routing: rule-label N/Q from trigger polarities, defer the rest.

The priority order is fixed: a positive trigger anywhere blocks the rules and
sends the record to the learned model; otherwise negation outranks
uncertainty. Records the rules do not claim are classified by whatever
predictor the caller supplies, over the task's model pair (Y/U or Y/N).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Protocol

from .corpus import AnnotationSet, ClinicalRecord, DiseaseLabel, TaskKind, build_training_set, task_label_set
from .errors import ConfigError, DataFormatError
from .linker import DEFAULT_TUI_WHITELIST, ConceptBag, ConceptEntry, filter_by_tui, link_concepts
from .preprocess import DEFAULT_FAMILY_KEYWORDS, TokenizedText, preprocess
from .trigger import (
    CueLexicon,
    DiseaseLexicon,
    PolaritySummary,
    find_trigger_phrases,
    polarity_summary,
    positive_trigger_tokens,
)


class DecisionSource(str, Enum):
    RULE_Q = "rule-q"
    RULE_N = "rule-n"
    DEFERRED = "deferred"


@dataclass(frozen=True)
class CascadeDecision:
    """Outcome of the rule stage for one (record, disease)."""

    label: DiseaseLabel | None
    source: DecisionSource

    def __post_init__(self) -> None:
        if self.source is DecisionSource.DEFERRED:
            if self.label is not None:
                raise ConfigError("a deferred decision carries no label")
        elif self.source is DecisionSource.RULE_Q and self.label is not DiseaseLabel.QUESTIONABLE:
            raise ConfigError("the uncertainty rule can only label Q")
        elif self.source is DecisionSource.RULE_N and self.label is not DiseaseLabel.ABSENT:
            raise ConfigError("the negation rule can only label N")


def rule_label(summary: PolaritySummary, task: TaskKind) -> CascadeDecision:
    """Apply the trigger-priority cascade to one record/disease summary.

    Positive beats negative beats uncertain: any positive trigger defers to
    the model, otherwise a negative trigger labels N, otherwise an uncertain
    trigger labels Q, otherwise (no triggers at all) defer. The routing is
    identical for both tasks; `task` states which label set the deferred
    path must later honor.
    """
    del task
    if summary.has_positive:
        return CascadeDecision(label=None, source=DecisionSource.DEFERRED)
    if summary.has_negative:
        return CascadeDecision(label=DiseaseLabel.ABSENT, source=DecisionSource.RULE_N)
    if summary.has_uncertain:
        return CascadeDecision(label=DiseaseLabel.QUESTIONABLE, source=DecisionSource.RULE_Q)
    return CascadeDecision(label=None, source=DecisionSource.DEFERRED)


@dataclass(frozen=True)
class PipelineResources:
    """Everything the text side of the pipeline needs, loaded once."""

    lexicons: tuple[DiseaseLexicon, ...]
    cues: CueLexicon
    concept_dictionary: tuple[ConceptEntry, ...]
    abbreviations: Mapping[str, str] = field(default_factory=dict)
    family_keywords: frozenset[str] = DEFAULT_FAMILY_KEYWORDS
    tui_whitelist: frozenset[str] = DEFAULT_TUI_WHITELIST

    def lexicon_for(self, disease: str) -> DiseaseLexicon:
        for lexicon in self.lexicons:
            if lexicon.disease == disease:
                return lexicon
        raise ConfigError(f"no disease lexicon for {disease!r}")


@dataclass(frozen=True)
class PreparedRecord:
    """A record after normalization and concept linking, shared by all diseases."""

    record: ClinicalRecord
    tok: TokenizedText
    concepts: ConceptBag


def prepare_record(record: ClinicalRecord, resources: PipelineResources) -> PreparedRecord:
    tok = preprocess(record.text, dict(resources.abbreviations), resources.family_keywords)
    bag = filter_by_tui(link_concepts(tok, resources.concept_dictionary), resources.concept_dictionary, resources.tui_whitelist)
    return PreparedRecord(record=record, tok=tok, concepts=bag)


@dataclass(frozen=True)
class ChannelInputs:
    """Model-facing views of one record for one disease.

    `words` are the record's positive trigger tokens in document order;
    `cuis` are the record's whitelisted concept ids in first-occurrence
    order. Both may be empty; the model copes with empty channels.
    """

    words: tuple[str, ...]
    cuis: tuple[str, ...]


def route_record(
    prepared: PreparedRecord,
    lexicon: DiseaseLexicon,
    cues: CueLexicon,
    task: TaskKind,
) -> tuple[CascadeDecision, ChannelInputs]:
    """Run the rule stage and build the model inputs for one disease."""
    triggers = find_trigger_phrases(prepared.tok, lexicon, cues)
    summary = polarity_summary(triggers).get(lexicon.disease, PolaritySummary())
    decision = rule_label(summary, task)
    channels = ChannelInputs(
        words=tuple(positive_trigger_tokens(triggers, prepared.tok)),
        cuis=tuple(prepared.concepts.cuis()),
    )
    return decision, channels


class LabelPredictor(Protocol):
    """Deferred-path classifier; `source_name` tags its predictions."""

    source_name: str

    def predict_label(self, channels: ChannelInputs) -> tuple[DiseaseLabel, float]: ...


@dataclass(frozen=True)
class RuleOnlyPredictor:
    """Mention-presence fallback used for the rules-only ablation.

    A record that reaches the deferred path with a positive trigger is called
    present; with no mention it is called unmentioned (textual) or absent
    (intuitive). No learned parameters anywhere.
    """

    task: TaskKind
    source_name: str = "rule-default"

    def predict_label(self, channels: ChannelInputs) -> tuple[DiseaseLabel, float]:
        if channels.words:
            return DiseaseLabel.PRESENT, 1.0
        if self.task is TaskKind.TEXTUAL:
            return DiseaseLabel.UNMENTIONED, 1.0
        return DiseaseLabel.ABSENT, 1.0


def classify_record(
    record: ClinicalRecord,
    disease: str,
    task: TaskKind,
    predictor: LabelPredictor | None,
    resources: PipelineResources,
) -> tuple[DiseaseLabel, str]:
    """Single-record convenience path: rules first, then the predictor.

    Bulk callers should prepare/route themselves and batch the deferred
    records through one model call instead.
    """
    lexicon = resources.lexicon_for(disease)
    prepared = prepare_record(record, resources)
    decision, channels = route_record(prepared, lexicon, resources.cues, task)
    if decision.source is not DecisionSource.DEFERRED:
        assert decision.label is not None
        return decision.label, decision.source.value
    if predictor is None:
        raise ConfigError(f"no model available for disease {disease!r}, task {task.value!r}")
    label, _ = predictor.predict_label(channels)
    return label, predictor.source_name


def build_model_examples(
    records: Iterable[ClinicalRecord],
    annotations: AnnotationSet,
    task: TaskKind,
    resources: PipelineResources,
    include_triggerless: bool = True,
) -> dict[str, list[tuple[ChannelInputs, DiseaseLabel]]]:
    """Per-disease training examples for the deferred-path models.

    Gold labels outside the task's model pair are dropped by the corpus
    filter. `include_triggerless=False` additionally drops examples whose
    word channel came out empty; the default keeps them, since the concept
    channel still describes the record.
    """
    pairs = build_training_set(records, annotations, task)
    prepared: dict[str, PreparedRecord] = {}
    out: dict[str, list[tuple[ChannelInputs, DiseaseLabel]]] = {}
    for disease, disease_pairs in pairs.items():
        lexicon = resources.lexicon_for(disease)
        examples: list[tuple[ChannelInputs, DiseaseLabel]] = []
        for record, gold in disease_pairs:
            if record.id not in prepared:
                prepared[record.id] = prepare_record(record, resources)
            _, channels = route_record(prepared[record.id], lexicon, resources.cues, task)
            if not include_triggerless and not channels.words:
                continue
            examples.append((channels, gold))
        out[disease] = examples
    return out


@dataclass(frozen=True)
class PredictionRow:
    """One line of the prediction file."""

    record_id: str
    disease: str
    task: TaskKind
    label: DiseaseLabel
    source: str

    def __post_init__(self) -> None:
        if self.label not in task_label_set(self.task):
            raise ConfigError(f"label {self.label.value} is outside the {self.task.value} label set")


def write_predictions(path: str | Path, rows: Iterable[PredictionRow]) -> None:
    """JSONL with a fixed key order so identical runs produce identical bytes."""
    with open(path, "w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(
                json.dumps(
                    {
                        "id": row.record_id,
                        "disease": row.disease,
                        "task": row.task.value,
                        "label": row.label.value,
                        "source": row.source,
                    }
                )
                + "\n"
            )


def read_predictions(path: str | Path) -> list[PredictionRow]:
    rows: list[PredictionRow] = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                rows.append(
                    PredictionRow(
                        record_id=raw["id"],
                        disease=raw["disease"],
                        task=TaskKind.from_name(raw["task"]),
                        label=DiseaseLabel.from_char(raw["label"]),
                        source=raw["source"],
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, DataFormatError) as exc:
                raise DataFormatError(f"bad prediction row: {exc}", source=str(path), line=lineno) from None
    return rows
