"""Report assembly, serialization, and figure rendering."""

import json

import pytest

from phenocascade.cascade import PredictionRow
from phenocascade.corpus import AnnotationSet, DiseaseLabel, TaskKind
from phenocascade.errors import DataFormatError
from phenocascade.report import (
    EvalReport,
    build_task_report,
    render_loss_curves,
    render_report_figures,
    report_to_json,
    report_to_text,
    report_to_tsv,
)

Y = DiseaseLabel.PRESENT
N = DiseaseLabel.ABSENT
U = DiseaseLabel.UNMENTIONED


def _rows(task, disease, pairs):
    return [
        PredictionRow(record_id=rec, disease=disease, task=task, label=label, source="model")
        for rec, label in pairs
    ]


@pytest.fixture
def textual_fixture():
    """Two diseases with hand-tallied scores.

    Disease A: gold Y,Y,Y,U -> pred Y,Y,U,U. Y: P=1, R=2/3, F=4/5.
    U: P=1/2, R=1, F=2/3. Macro 11/15, micro 3/4.
    Disease B: gold Y,N predicted perfectly. Macro 1, micro 1.
    Pooled: Y tp=3 fn=1 F=6/7; U F=2/3; N F=1 -> macro 53/63, micro 5/6.
    """
    gold = AnnotationSet(
        task=TaskKind.TEXTUAL,
        judgments={
            ("A", "r1"): Y,
            ("A", "r2"): Y,
            ("A", "r3"): Y,
            ("A", "r4"): U,
            ("B", "r1"): Y,
            ("B", "r2"): N,
        },
    )
    rows = _rows(TaskKind.TEXTUAL, "A", [("r1", Y), ("r2", Y), ("r3", U), ("r4", U)])
    rows += _rows(TaskKind.TEXTUAL, "B", [("r1", Y), ("r2", N)])
    return gold, rows


def test_task_report_hand_values(textual_fixture):
    gold, rows = textual_fixture
    report = build_task_report(gold, rows)
    assert report.task is TaskKind.TEXTUAL
    assert report.diseases == ("A", "B")
    assert report.macro("A") == pytest.approx(11 / 15, abs=1e-12)
    assert report.micro("A") == pytest.approx(3 / 4, abs=1e-12)
    assert report.macro("B") == 1.0
    assert report.overall.macro_f1 == pytest.approx(53 / 63, abs=1e-12)
    assert report.overall.micro_f1 == pytest.approx(5 / 6, abs=1e-12)
    assert report.overall.mean_disease_macro == pytest.approx(13 / 15, abs=1e-12)
    assert report.records() == 6


def test_build_rejects_wrong_task_row(textual_fixture):
    gold, rows = textual_fixture
    bad = PredictionRow(record_id="r1", disease="A", task=TaskKind.INTUITIVE, label=Y, source="model")
    with pytest.raises(DataFormatError, match="intuitive"):
        build_task_report(gold, rows + [bad])


def test_build_rejects_duplicate_prediction(textual_fixture):
    gold, rows = textual_fixture
    with pytest.raises(DataFormatError, match="duplicate"):
        build_task_report(gold, rows + [rows[0]])


def test_build_rejects_stray_disease(textual_fixture):
    gold, rows = textual_fixture
    stray = PredictionRow(record_id="r1", disease="C", task=TaskKind.TEXTUAL, label=Y, source="model")
    with pytest.raises(DataFormatError, match="C"):
        build_task_report(gold, rows + [stray])


def test_build_rejects_stray_record(textual_fixture):
    gold, rows = textual_fixture
    stray = PredictionRow(record_id="r9", disease="A", task=TaskKind.TEXTUAL, label=Y, source="model")
    with pytest.raises(DataFormatError, match="r9"):
        build_task_report(gold, rows + [stray])


def test_build_rejects_missing_prediction(textual_fixture):
    gold, rows = textual_fixture
    with pytest.raises(DataFormatError, match="r4"):
        build_task_report(gold, rows[:-3] + rows[-2:])


def _two_task_report(textual_fixture):
    gold, rows = textual_fixture
    textual = build_task_report(gold, rows)
    gold_int = AnnotationSet(
        task=TaskKind.INTUITIVE,
        judgments={("A", "r1"): Y, ("A", "r2"): N},
    )
    rows_int = _rows(TaskKind.INTUITIVE, "A", [("r1", Y), ("r2", N)])
    return EvalReport(tasks=(textual, build_task_report(gold_int, rows_int)))


def test_json_payload_shape(textual_fixture):
    report = _two_task_report(textual_fixture)
    payload = json.loads(report_to_json(report))
    assert payload["diseases"] == ["A", "B"]
    textual = payload["tasks"]["textual"]
    assert textual["diseases"]["A"]["macro_f1"] == pytest.approx(11 / 15)
    assert textual["diseases"]["A"]["classes"]["Y"]["recall"] == pytest.approx(2 / 3)
    assert textual["overall"]["macro_f1"] == pytest.approx(53 / 63)
    assert textual["overall"]["records"] == 6
    assert payload["tasks"]["intuitive"]["overall"]["macro_f1"] == 1.0


def test_tsv_layout(textual_fixture):
    report = _two_task_report(textual_fixture)
    lines = report_to_tsv(report).splitlines()
    header = lines[0].split("\t")
    assert header == [
        "disease",
        "textual_macro_f1",
        "textual_micro_f1",
        "intuitive_macro_f1",
        "intuitive_micro_f1",
    ]
    by_name = {line.split("\t")[0]: line.split("\t") for line in lines[1:]}
    assert by_name["A"][1] == "%.4f" % (11 / 15)
    # Disease B has no intuitive judgments, so those columns stay blank.
    assert by_name["B"][3] == "" and by_name["B"][4] == ""
    assert by_name["Overall"][1] == "%.4f" % (53 / 63)


def test_text_table_mentions_all_rows(textual_fixture):
    report = _two_task_report(textual_fixture)
    text = report_to_text(report)
    for token in ("Disease", "A", "B", "Overall", "Textual Macro F1", "Intuitive Micro F1"):
        assert token in text
    assert "%.4f" % (53 / 63) in text


def test_figures_written(tmp_path, textual_fixture):
    report = _two_task_report(textual_fixture)
    paths = render_report_figures(report, tmp_path)
    names = {p.name for p in paths}
    assert names == {"f1-scores.png", "confusion-textual.png", "confusion-intuitive.png"}
    for path in paths:
        assert path.stat().st_size > 0


def test_loss_curves_written(tmp_path):
    out = render_loss_curves({"A": [0.9, 0.5, 0.3], "B": [1.1, 0.7, 0.6]}, tmp_path / "loss.png")
    assert out.stat().st_size > 0
