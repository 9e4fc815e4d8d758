"""Confusion bookkeeping, F1 aggregation, and the paired significance test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import t as student_t

from .corpus import DiseaseLabel, TaskKind, task_label_set
from .errors import DataFormatError


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class ConfusionCounts:
    """Full gold-by-predicted matrix for one task's label set.

    Everything downstream (per-class precision/recall, macro, micro, pooled
    overall numbers) is derived from this one structure, so a recount of the
    raw judgments is always available as a cross-check.
    """

    labels: tuple[DiseaseLabel, ...]
    matrix: Mapping[tuple[DiseaseLabel, DiseaseLabel], int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        known = set(self.labels)
        for (gold, pred), count in self.matrix.items():
            if gold not in known or pred not in known:
                raise DataFormatError(f"confusion cell ({gold}, {pred}) outside label set")
            if count < 0:
                raise DataFormatError("confusion counts must be non-negative")

    def cell(self, gold: DiseaseLabel, pred: DiseaseLabel) -> int:
        return self.matrix.get((gold, pred), 0)

    def tp(self, label: DiseaseLabel) -> int:
        return self.cell(label, label)

    def fp(self, label: DiseaseLabel) -> int:
        return sum(self.cell(g, label) for g in self.labels if g != label)

    def fn(self, label: DiseaseLabel) -> int:
        return sum(self.cell(label, p) for p in self.labels if p != label)

    def support(self, label: DiseaseLabel) -> int:
        return sum(self.cell(label, p) for p in self.labels)

    def total(self) -> int:
        return sum(self.matrix.values())

    def add(self, other: "ConfusionCounts") -> "ConfusionCounts":
        if other.labels != self.labels:
            raise DataFormatError("cannot pool confusion matrices over different label sets")
        pooled = dict(self.matrix)
        for key, count in other.matrix.items():
            pooled[key] = pooled.get(key, 0) + count
        return ConfusionCounts(labels=self.labels, matrix=pooled)


def confusion(
    gold: Mapping[str, DiseaseLabel],
    predicted: Mapping[str, DiseaseLabel],
    task: TaskKind,
) -> ConfusionCounts:
    """Tally gold vs predicted per record; every gold record must be predicted."""
    labels = task_label_set(task)
    matrix: dict[tuple[DiseaseLabel, DiseaseLabel], int] = {}
    for record_id, gold_label in gold.items():
        if record_id not in predicted:
            raise DataFormatError(f"no prediction for record {record_id!r}")
        pred_label = predicted[record_id]
        key = (gold_label, pred_label)
        matrix[key] = matrix.get(key, 0) + 1
    return ConfusionCounts(labels=labels, matrix=matrix)


def class_scores(counts: ConfusionCounts, label: DiseaseLabel) -> ClassScores:
    """Per-class precision/recall/F1 with the zero-denominator-means-zero rule."""
    tp, fp, fn = counts.tp(label), counts.fp(label), counts.fn(label)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ClassScores(precision=precision, recall=recall, f1=f1, support=counts.support(label))


def macro_f1(counts: ConfusionCounts) -> float:
    """Mean per-class F1 over the classes that actually occur in the gold data."""
    supported = [label for label in counts.labels if counts.support(label) > 0]
    if not supported:
        raise DataFormatError("macro-F1 undefined: no class has gold support")
    return sum(class_scores(counts, label).f1 for label in supported) / len(supported)


def micro_f1(counts: ConfusionCounts) -> float:
    """Pooled-count F1; with one label per record this equals plain accuracy."""
    tp = sum(counts.tp(label) for label in counts.labels)
    fp = sum(counts.fp(label) for label in counts.labels)
    fn = sum(counts.fn(label) for label in counts.labels)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def pool(per_disease: Mapping[str, ConfusionCounts]) -> ConfusionCounts:
    """Sum the per-disease matrices cell-wise into one task-level matrix."""
    if not per_disease:
        raise DataFormatError("cannot pool an empty set of confusion matrices")
    result: ConfusionCounts | None = None
    for counts in per_disease.values():
        result = counts if result is None else result.add(counts)
    assert result is not None
    return result


@dataclass(frozen=True)
class OverallScores:
    """Task-level summary.

    `macro_f1`/`micro_f1` come from the pooled per-class counts across all
    diseases (the headline numbers); `mean_disease_macro` averages each
    disease's own macro-F1 instead and is reported alongside.
    """

    macro_f1: float
    micro_f1: float
    mean_disease_macro: float


def overall_scores(per_disease: Mapping[str, ConfusionCounts]) -> OverallScores:
    pooled = pool(per_disease)
    per_macro = [macro_f1(c) for c in per_disease.values()]
    return OverallScores(
        macro_f1=macro_f1(pooled),
        micro_f1=micro_f1(pooled),
        mean_disease_macro=sum(per_macro) / len(per_macro),
    )


@dataclass(frozen=True)
class TTestResult:
    statistic: float
    p_value: float
    df: int
    degenerate: bool


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Two-tailed paired t-test on the per-item differences a[i] - b[i].

    Zero variance of the differences leaves the statistic undefined, so the
    result is flagged degenerate: identical inputs report (t=0, p=1) and a
    constant non-zero difference reports (t=+/-inf, p=0).
    """
    if len(a) != len(b):
        raise DataFormatError("paired t-test requires equal-length score lists")
    if len(a) < 2:
        raise DataFormatError("paired t-test requires at least two pairs")
    diffs = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    n = len(diffs)
    mean = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(statistic=0.0, p_value=1.0, df=df, degenerate=True)
        stat = math.inf if mean > 0 else -math.inf
        return TTestResult(statistic=stat, p_value=0.0, df=df, degenerate=True)
    stat = mean / (sd / math.sqrt(n))
    p = 2.0 * float(student_t.sf(abs(stat), df))
    return TTestResult(statistic=stat, p_value=p, df=df, degenerate=False)
