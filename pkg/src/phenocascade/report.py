"""Evaluation report assembly and rendering: JSON, TSV, text, and figures.

The tabular layouts put diseases on rows and, per task, a macro-F1 and a
micro-F1 column, closing with an Overall row computed from counts pooled
across diseases; the mean of per-disease macros is reported alongside as a
secondary aggregate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .cascade import PredictionRow
from .corpus import AnnotationSet, DiseaseLabel, TaskKind
from .errors import DataFormatError
from .evaluation import (
    ConfusionCounts,
    OverallScores,
    class_scores,
    confusion,
    macro_f1,
    micro_f1,
    overall_scores,
    pool,
)


@dataclass(frozen=True)
class TaskReport:
    """Scores for one task: per-disease confusion counts plus the overall row."""

    task: TaskKind
    diseases: tuple[str, ...]
    counts: Mapping[str, ConfusionCounts]
    overall: OverallScores

    def macro(self, disease: str) -> float:
        return macro_f1(self.counts[disease])

    def micro(self, disease: str) -> float:
        return micro_f1(self.counts[disease])

    def records(self) -> int:
        return sum(c.total() for c in self.counts.values())


@dataclass(frozen=True)
class EvalReport:
    tasks: tuple[TaskReport, ...]

    def diseases(self) -> tuple[str, ...]:
        ordered: dict[str, None] = {}
        for task_report in self.tasks:
            for disease in task_report.diseases:
                ordered.setdefault(disease)
        return tuple(ordered)


def build_task_report(annotations: AnnotationSet, rows: Sequence[PredictionRow]) -> TaskReport:
    """Score predictions against gold; every row must belong to the gold set."""
    task = annotations.task
    by_disease: dict[str, dict[str, DiseaseLabel]] = {}
    for row in rows:
        if row.task is not task:
            raise DataFormatError(
                f"prediction for record {row.record_id!r} carries task {row.task.value!r}, gold is {task.value!r}"
            )
        by_disease.setdefault(row.disease, {})
        if row.record_id in by_disease[row.disease]:
            raise DataFormatError(f"duplicate prediction for disease {row.disease!r}, record {row.record_id!r}")
        by_disease[row.disease][row.record_id] = row.label

    gold_diseases = annotations.diseases()
    stray = set(by_disease) - set(gold_diseases)
    if stray:
        raise DataFormatError(f"predictions cover diseases without gold judgments: {sorted(stray)}")

    counts: dict[str, ConfusionCounts] = {}
    for disease in gold_diseases:
        gold = annotations.for_disease(disease)
        predicted = by_disease.get(disease, {})
        stray_records = set(predicted) - set(gold)
        if stray_records:
            raise DataFormatError(
                f"predictions for disease {disease!r} cover unknown records: {sorted(stray_records)[:5]}"
            )
        counts[disease] = confusion(gold, predicted, task)
    return TaskReport(
        task=task,
        diseases=tuple(gold_diseases),
        counts=counts,
        overall=overall_scores(counts),
    )


def report_to_json(report: EvalReport) -> str:
    payload: dict = {"diseases": list(report.diseases()), "tasks": {}}
    for task_report in report.tasks:
        diseases: dict = {}
        for disease in task_report.diseases:
            counts = task_report.counts[disease]
            diseases[disease] = {
                "macro_f1": task_report.macro(disease),
                "micro_f1": task_report.micro(disease),
                "records": counts.total(),
                "classes": {
                    label.value: {
                        "precision": scores.precision,
                        "recall": scores.recall,
                        "f1": scores.f1,
                        "support": scores.support,
                    }
                    for label in counts.labels
                    for scores in (class_scores(counts, label),)
                },
            }
        payload["tasks"][task_report.task.value] = {
            "diseases": diseases,
            "overall": {
                "macro_f1": task_report.overall.macro_f1,
                "micro_f1": task_report.overall.micro_f1,
                "mean_disease_macro": task_report.overall.mean_disease_macro,
                "records": task_report.records(),
            },
        }
    return json.dumps(payload, indent=2) + "\n"


def _score_columns(report: EvalReport, disease: str | None) -> list[str]:
    cells: list[str] = []
    for task_report in report.tasks:
        if disease is None:
            cells.append(f"{task_report.overall.macro_f1:.4f}")
            cells.append(f"{task_report.overall.micro_f1:.4f}")
        elif disease in task_report.counts:
            cells.append(f"{task_report.macro(disease):.4f}")
            cells.append(f"{task_report.micro(disease):.4f}")
        else:
            cells.extend(["", ""])
    return cells


def report_to_tsv(report: EvalReport) -> str:
    header = ["disease"]
    for task_report in report.tasks:
        header.append(f"{task_report.task.value}_macro_f1")
        header.append(f"{task_report.task.value}_micro_f1")
    lines = ["\t".join(header)]
    for disease in report.diseases():
        lines.append("\t".join([disease] + _score_columns(report, disease)))
    lines.append("\t".join(["Overall"] + _score_columns(report, None)))
    return "\n".join(lines) + "\n"


def report_to_text(report: EvalReport) -> str:
    diseases = report.diseases()
    name_width = max([len("Disease"), len("Overall")] + [len(d) for d in diseases])
    headers = []
    for task_report in report.tasks:
        headers.append(f"{task_report.task.value.capitalize()} Macro F1")
        headers.append(f"{task_report.task.value.capitalize()} Micro F1")
    col_width = max(len(h) for h in headers) if headers else 8

    def row(name: str, cells: Sequence[str]) -> str:
        return "  ".join([name.ljust(name_width)] + [c.rjust(col_width) for c in cells])

    lines = [row("Disease", headers)]
    lines.append("-" * len(lines[0]))
    for disease in diseases:
        lines.append(row(disease, _score_columns(report, disease)))
    lines.append("-" * len(lines[0]))
    lines.append(row("Overall", _score_columns(report, None)))
    for task_report in report.tasks:
        lines.append(
            f"{task_report.task.value}: mean of per-disease macro F1 = "
            f"{task_report.overall.mean_disease_macro:.4f} over {task_report.records()} judgments"
        )
    return "\n".join(lines) + "\n"


def render_report_figures(report: EvalReport, out_dir: str | Path) -> list[Path]:
    """Bar chart of per-disease scores plus one confusion heatmap per task.

    matplotlib is imported here so report-free runs never pay for it.
    """
    import numpy as np
    from matplotlib.figure import Figure

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    diseases = list(report.diseases())
    groups = diseases + ["Overall"]
    fig = Figure(figsize=(max(6.0, 1.1 * len(groups)), 4.5))
    ax = fig.add_subplot(111)
    positions = np.arange(len(groups), dtype=float)
    n_series = 2 * len(report.tasks)
    width = 0.8 / max(n_series, 1)
    series_idx = 0
    for task_report in report.tasks:
        for metric, getter in (
            ("macro", lambda d, tr=task_report: tr.macro(d) if d in tr.counts else 0.0),
            ("micro", lambda d, tr=task_report: tr.micro(d) if d in tr.counts else 0.0),
        ):
            values = [getter(d) for d in diseases]
            values.append(
                task_report.overall.macro_f1 if metric == "macro" else task_report.overall.micro_f1
            )
            offset = (series_idx - (n_series - 1) / 2) * width
            ax.bar(positions + offset, values, width, label=f"{task_report.task.value} {metric} F1")
            series_idx += 1
    ax.set_xticks(positions)
    ax.set_xticklabels(groups, rotation=30, ha="right")
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("F1")
    ax.legend(fontsize="small")
    fig.tight_layout()
    path = out / "f1-scores.png"
    fig.savefig(path, dpi=110)
    written.append(path)

    for task_report in report.tasks:
        pooled = pool(dict(task_report.counts))
        labels = pooled.labels
        grid = np.array(
            [[pooled.cell(g, p) for p in labels] for g in labels], dtype=float
        )
        fig = Figure(figsize=(4.2, 3.8))
        ax = fig.add_subplot(111)
        image = ax.imshow(grid, cmap="Blues")
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels([l.value for l in labels])
        ax.set_yticks(range(len(labels)))
        ax.set_yticklabels([l.value for l in labels])
        ax.set_xlabel("predicted")
        ax.set_ylabel("gold")
        ax.set_title(f"{task_report.task.value} confusion (pooled)")
        threshold = grid.max() / 2 if grid.max() > 0 else 0.5
        for i in range(len(labels)):
            for j in range(len(labels)):
                color = "white" if grid[i, j] > threshold else "black"
                ax.text(j, i, str(int(grid[i, j])), ha="center", va="center", color=color)
        fig.colorbar(image, ax=ax, shrink=0.85)
        fig.tight_layout()
        path = out / f"confusion-{task_report.task.value}.png"
        fig.savefig(path, dpi=110)
        written.append(path)
    return written


def render_loss_curves(curves: Mapping[str, Sequence[float]], path: str | Path) -> Path:
    """One line per disease of mean training loss across epochs."""
    from matplotlib.figure import Figure

    fig = Figure(figsize=(6.4, 4.2))
    ax = fig.add_subplot(111)
    for name, losses in curves.items():
        ax.plot(range(1, len(losses) + 1), list(losses), label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss")
    if curves:
        ax.legend(fontsize="small")
    fig.tight_layout()
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=110)
    return out
