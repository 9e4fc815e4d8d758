"""Data model and I/O for clinical records, gold judgments, and the two tasks.

Two input routes are supported: challenge-style XML (records and judgment
files) and a JSONL corpus format that bundles records with one task's labels.
All values are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
import xml.parsers.expat
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

from .errors import DataFormatError


class DiseaseLabel(str, Enum):
    """Disease status judgment, serialized as the single characters Y/N/Q/U."""

    PRESENT = "Y"
    ABSENT = "N"
    QUESTIONABLE = "Q"
    UNMENTIONED = "U"

    @classmethod
    def from_char(cls, char: str) -> "DiseaseLabel":
        try:
            return cls(char)
        except ValueError:
            raise DataFormatError(f"unknown judgment character {char!r}") from None


LABEL_ORDER: tuple[DiseaseLabel, ...] = (
    DiseaseLabel.PRESENT,
    DiseaseLabel.ABSENT,
    DiseaseLabel.QUESTIONABLE,
    DiseaseLabel.UNMENTIONED,
)


class TaskKind(str, Enum):
    """The two judgment flavors: explicit textual evidence vs clinical intuition."""

    TEXTUAL = "textual"
    INTUITIVE = "intuitive"

    @classmethod
    def from_name(cls, name: str) -> "TaskKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise DataFormatError(f"unknown task {name!r}; expected 'textual' or 'intuitive'") from None


def task_label_set(task: TaskKind) -> tuple[DiseaseLabel, ...]:
    """Labels a task may carry; the intuitive task excludes Unmentioned."""
    if task is TaskKind.INTUITIVE:
        return (DiseaseLabel.PRESENT, DiseaseLabel.ABSENT, DiseaseLabel.QUESTIONABLE)
    return LABEL_ORDER


def model_class_pair(task: TaskKind) -> tuple[DiseaseLabel, DiseaseLabel]:
    """The two classes a learned model distinguishes after rule filtering."""
    if task is TaskKind.TEXTUAL:
        return (DiseaseLabel.PRESENT, DiseaseLabel.UNMENTIONED)
    return (DiseaseLabel.PRESENT, DiseaseLabel.ABSENT)


@dataclass(frozen=True)
class ClinicalRecord:
    """One clinical note: a unique id plus its full text."""

    id: str
    text: str

    def __post_init__(self) -> None:
        if not self.id:
            raise DataFormatError("record id must be non-empty")
        if not self.text:
            raise DataFormatError(f"record {self.id!r} has empty text")


@dataclass(frozen=True)
class AnnotationSet:
    """Gold judgments for one task: (disease, record id) -> label."""

    task: TaskKind
    judgments: Mapping[tuple[str, str], DiseaseLabel]

    def __post_init__(self) -> None:
        if self.task is TaskKind.INTUITIVE:
            for (disease, rec_id), label in self.judgments.items():
                if label is DiseaseLabel.UNMENTIONED:
                    raise DataFormatError(
                        f"intuitive judgment for disease {disease!r}, record {rec_id!r} is U; "
                        "the intuitive task has no Unmentioned class"
                    )

    def diseases(self) -> list[str]:
        """Disease names in first-appearance order."""
        seen: dict[str, None] = {}
        for disease, _ in self.judgments:
            seen.setdefault(disease)
        return list(seen)

    def for_disease(self, disease: str) -> dict[str, DiseaseLabel]:
        return {rec_id: label for (d, rec_id), label in self.judgments.items() if d == disease}

    def label_counts(self) -> dict[DiseaseLabel, int]:
        counts = {label: 0 for label in LABEL_ORDER}
        for label in self.judgments.values():
            counts[label] += 1
        return counts


def _expat_error_byte_offset(data: bytes) -> int:
    parser = xml.parsers.expat.ParserCreate()
    try:
        parser.Parse(data, True)
    except xml.parsers.expat.ExpatError:
        return parser.ErrorByteIndex
    return -1


def _parse_xml_root(data: bytes, source: str) -> ET.Element:
    try:
        return ET.fromstring(data)
    except ET.ParseError as exc:
        offset = _expat_error_byte_offset(data)
        raise DataFormatError(f"malformed XML at byte offset {offset}: {exc}", source=source) from exc


def parse_records_xml(data: bytes, *, source: str = "records") -> list[ClinicalRecord]:
    """Parse a challenge-style records file.

    The root may be any element; every ``<doc id="...">`` descendant with a
    ``<text>`` child becomes one record. Text content is preserved verbatim
    apart from XML unescaping.
    """
    root = _parse_xml_root(data, source)
    records: list[ClinicalRecord] = []
    seen: set[str] = set()
    for doc in root.iter("doc"):
        rec_id = doc.get("id")
        if rec_id is None:
            raise DataFormatError("<doc> element without an id attribute", source=source)
        if rec_id in seen:
            raise DataFormatError(f"duplicate record id {rec_id!r}", source=source)
        seen.add(rec_id)
        text_el = doc.find("text")
        if text_el is None:
            raise DataFormatError(f"<doc id={rec_id!r}> has no <text> child", source=source)
        records.append(ClinicalRecord(id=rec_id, text=text_el.text or ""))
    return records


def parse_annotations_xml(data: bytes, task: TaskKind, *, source: str = "annotations") -> AnnotationSet:
    """Parse a challenge-style judgment file for one task.

    Judgments are read from ``<diseases>`` groups whose ``source`` attribute
    matches the task name (groups without the attribute are accepted too,
    so single-task files need no attribute). Each group holds
    ``<disease name="...">`` elements containing ``<doc id=... judgment=.../>``
    entries.
    """
    root = _parse_xml_root(data, source)
    judgments: dict[tuple[str, str], DiseaseLabel] = {}
    groups = list(root.iter("diseases"))
    for group in groups:
        group_source = group.get("source")
        if group_source is not None and group_source.strip().lower() != task.value:
            continue
        for disease_el in group.iter("disease"):
            name = disease_el.get("name")
            if not name:
                raise DataFormatError("<disease> element without a name attribute", source=source)
            for doc in disease_el.iter("doc"):
                rec_id = doc.get("id")
                judgment = doc.get("judgment")
                if rec_id is None or judgment is None:
                    raise DataFormatError(
                        f"judgment entry under disease {name!r} lacks id or judgment attribute",
                        source=source,
                    )
                label = DiseaseLabel.from_char(judgment)
                key = (name, rec_id)
                if key in judgments:
                    raise DataFormatError(
                        f"duplicate judgment for disease {name!r}, record {rec_id!r}", source=source
                    )
                judgments[key] = label
    return AnnotationSet(task=task, judgments=judgments)


def _xml_bytes(root: ET.Element) -> bytes:
    tree = ET.ElementTree(root)
    ET.indent(tree)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True) + b"\n"


def records_to_xml(records: Iterable[ClinicalRecord]) -> bytes:
    """Serialize records to the XML layout `parse_records_xml` accepts."""
    root = ET.Element("docs")
    for record in records:
        doc = ET.SubElement(root, "doc", id=record.id)
        ET.SubElement(doc, "text").text = record.text
    return _xml_bytes(root)


def annotations_to_xml(annotations: AnnotationSet) -> bytes:
    """Serialize one task's judgments to the XML layout `parse_annotations_xml` accepts."""
    root = ET.Element("diseaseset")
    group = ET.SubElement(root, "diseases", source=annotations.task.value)
    by_disease: dict[str, list[tuple[str, DiseaseLabel]]] = {}
    for (disease, rec_id), label in annotations.judgments.items():
        by_disease.setdefault(disease, []).append((rec_id, label))
    for disease, entries in by_disease.items():
        disease_el = ET.SubElement(group, "disease", name=disease)
        for rec_id, label in entries:
            ET.SubElement(disease_el, "doc", id=rec_id, judgment=label.value)
    return _xml_bytes(root)


def write_jsonl_corpus(path: str | Path, records: Iterable[ClinicalRecord], annotations: AnnotationSet) -> None:
    """Write records plus one task's labels as UTF-8 JSONL, one record per line."""
    labels_by_record: dict[str, dict[str, str]] = {}
    for (disease, rec_id), label in annotations.judgments.items():
        labels_by_record.setdefault(rec_id, {})[disease] = label.value
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            obj = {"id": record.id, "text": record.text, "labels": labels_by_record.get(record.id, {})}
            handle.write(json.dumps(obj, ensure_ascii=False) + "\n")


def read_jsonl_corpus(path: str | Path, task: TaskKind) -> tuple[list[ClinicalRecord], AnnotationSet]:
    """Read a JSONL corpus written by `write_jsonl_corpus`.

    The file stores labels without a task marker, so the caller names the
    task the labels belong to. Write-then-read is an identity on records
    and judgments.
    """
    source = str(path)
    records: list[ClinicalRecord] = []
    judgments: dict[tuple[str, str], DiseaseLabel] = {}
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"invalid JSON: {exc}", source=source, line=lineno) from exc
            for field in ("id", "text", "labels"):
                if field not in obj:
                    raise DataFormatError(f"missing field {field!r}", source=source, line=lineno)
            rec_id = obj["id"]
            if rec_id in seen:
                raise DataFormatError(f"duplicate record id {rec_id!r}", source=source, line=lineno)
            seen.add(rec_id)
            records.append(ClinicalRecord(id=rec_id, text=obj["text"]))
            for disease, char in obj["labels"].items():
                judgments[(disease, rec_id)] = DiseaseLabel.from_char(char)
    return records, AnnotationSet(task=task, judgments=judgments)


#: Labels kept in the training set of each task; the remainder are the
#: rare classes the rule stage handles at test time.
TRAINING_LABELS: dict[TaskKind, frozenset[DiseaseLabel]] = {
    TaskKind.TEXTUAL: frozenset({DiseaseLabel.PRESENT, DiseaseLabel.UNMENTIONED}),
    TaskKind.INTUITIVE: frozenset({DiseaseLabel.PRESENT, DiseaseLabel.ABSENT}),
}


def build_training_set(
    records: Iterable[ClinicalRecord],
    annotations: AnnotationSet,
    task: TaskKind,
) -> dict[str, list[tuple[ClinicalRecord, DiseaseLabel]]]:
    """Per-disease (record, label) training pairs with rare classes removed.

    Textual keeps Y/U pairs; intuitive keeps Y/N pairs. Records without a
    judgment for a disease are excluded from that disease's pairs rather
    than defaulted.
    """
    if annotations.task is not task:
        raise ValueError(f"annotations are for task {annotations.task.value!r}, not {task.value!r}")
    keep = TRAINING_LABELS[task]
    by_id = {record.id: record for record in records}
    pairs: dict[str, list[tuple[ClinicalRecord, DiseaseLabel]]] = {}
    for disease in annotations.diseases():
        pairs[disease] = []
    for (disease, rec_id), label in annotations.judgments.items():
        record = by_id.get(rec_id)
        if record is not None and label in keep:
            pairs[disease].append((record, label))
    return pairs
