"""Deterministic generator of desk-scale corpora with known ground truth.

A generated record's text encodes its labels by construction: a present
disease gets a bare alias mention, an absent one a negated mention, a
questionable one an uncertain mention, and an unmentioned one no mention at
all. Disease-status marker phrases link to synthetic concepts so the concept
channel carries its own signal, and every output file is byte-reproducible
from the corpus spec and seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import (
    AnnotationSet,
    ClinicalRecord,
    DiseaseLabel,
    TaskKind,
    annotations_to_xml,
    records_to_xml,
)
from .embeddings import EmbeddingTable, write_word2vec_text
from .errors import ConfigError

DEFAULT_NEGATION_CUES = ("no", "not", "denies", "denied", "without", "absent")
DEFAULT_UNCERTAINTY_CUES = ("possible", "probable", "suspected", "questionable", "likely", "rule out")

# Joint (textual, intuitive) classes a record can occupy for one disease.
# Textual U splits by whether the disease is intuitively present anyway.
_JOINT_CLASSES = (
    (DiseaseLabel.PRESENT, DiseaseLabel.PRESENT),
    (DiseaseLabel.ABSENT, DiseaseLabel.ABSENT),
    (DiseaseLabel.QUESTIONABLE, DiseaseLabel.QUESTIONABLE),
    (DiseaseLabel.UNMENTIONED, DiseaseLabel.PRESENT),
    (DiseaseLabel.UNMENTIONED, DiseaseLabel.ABSENT),
)

_FAMILY_MEMBERS = ("mother", "father", "brother", "sister")

_MIX_TOLERANCE = 1e-9


def _mix_value(mix: Mapping[DiseaseLabel, float], label: DiseaseLabel) -> float:
    return float(mix.get(label, 0.0))


@dataclass(frozen=True)
class SynthSpec:
    """Everything that determines a generated corpus, including its seed."""

    diseases: tuple[tuple[str, tuple[str, ...]], ...]
    n_records: int
    textual_mix: Mapping[DiseaseLabel, float]
    intuitive_mix: Mapping[DiseaseLabel, float]
    noise_vocab_size: int = 40
    noise_tokens_per_record: int = 10
    paraphrase_rate: float = 0.0
    oov_filler_rate: float = 0.0
    family_history_rate: float = 0.0
    word_dim: int = 24
    cui_dim: int = 12
    seed: int = 0
    negation_cues: tuple[str, ...] = DEFAULT_NEGATION_CUES
    uncertainty_cues: tuple[str, ...] = DEFAULT_UNCERTAINTY_CUES

    def __post_init__(self) -> None:
        if not self.diseases:
            raise ConfigError("spec needs at least one disease")
        for name, aliases in self.diseases:
            if not name or not aliases or any(not a.strip() for a in aliases):
                raise ConfigError(f"disease {name!r} needs a name and non-empty aliases")
        if self.n_records < 1:
            raise ConfigError("n_records must be positive")
        if self.noise_vocab_size < 1 or self.noise_tokens_per_record < 0:
            raise ConfigError("noise vocabulary must be positive, filler count non-negative")
        for rate_name in ("paraphrase_rate", "oov_filler_rate", "family_history_rate"):
            rate = getattr(self, rate_name)
            if not 0.0 <= rate <= 1.0:
                raise ConfigError(f"{rate_name} must be inside [0, 1]")
        if min(self.word_dim, self.cui_dim) < 1:
            raise ConfigError("embedding dimensions must be positive")
        for task_name, mix in (("textual", self.textual_mix), ("intuitive", self.intuitive_mix)):
            total = sum(float(v) for v in mix.values())
            if abs(total - 1.0) > _MIX_TOLERANCE:
                raise ConfigError(f"{task_name} mix sums to {total}, expected 1")
            if any(float(v) < 0 for v in mix.values()):
                raise ConfigError(f"{task_name} mix has a negative proportion")
        if _mix_value(self.intuitive_mix, DiseaseLabel.UNMENTIONED) != 0.0:
            raise ConfigError("the intuitive task has no Unmentioned class; its mix share must be 0")
        self.joint_proportions()
        if _mix_value(self.textual_mix, DiseaseLabel.QUESTIONABLE) > 0 and not self.uncertainty_cues:
            raise ConfigError("mix asks for Q records but the uncertainty cue list is empty")
        if _mix_value(self.textual_mix, DiseaseLabel.ABSENT) > 0 and not self.negation_cues:
            raise ConfigError("mix asks for N records but the negation cue list is empty")

    def joint_proportions(self) -> tuple[float, ...]:
        """Proportions over the five joint (textual, intuitive) classes.

        Explicit mentions pin the intuitive label, so the only freedom is how
        textual-U mass splits between intuitively present and absent; both
        shares must come out non-negative for the pair of mixes to be
        realizable in one corpus.
        """
        tex = {label: _mix_value(self.textual_mix, label) for label in DiseaseLabel}
        intu = {label: _mix_value(self.intuitive_mix, label) for label in DiseaseLabel}
        if abs(tex[DiseaseLabel.QUESTIONABLE] - intu[DiseaseLabel.QUESTIONABLE]) > _MIX_TOLERANCE:
            raise ConfigError("Q proportions must agree across tasks: uncertain mentions are uncertain in both")
        fold_y = intu[DiseaseLabel.PRESENT] - tex[DiseaseLabel.PRESENT]
        fold_n = intu[DiseaseLabel.ABSENT] - tex[DiseaseLabel.ABSENT]
        if fold_y < -_MIX_TOLERANCE or fold_n < -_MIX_TOLERANCE:
            raise ConfigError(
                "intuitive Y and N shares must each cover the textual ones; "
                "explicit mentions already fix those records' intuitive labels"
            )
        return (
            tex[DiseaseLabel.PRESENT],
            tex[DiseaseLabel.ABSENT],
            tex[DiseaseLabel.QUESTIONABLE],
            max(fold_y, 0.0),
            max(fold_n, 0.0),
        )

    def to_dict(self) -> dict:
        return {
            "diseases": [[name, list(aliases)] for name, aliases in self.diseases],
            "n_records": self.n_records,
            "textual_mix": {l.value: float(v) for l, v in self.textual_mix.items()},
            "intuitive_mix": {l.value: float(v) for l, v in self.intuitive_mix.items()},
            "noise_vocab_size": self.noise_vocab_size,
            "noise_tokens_per_record": self.noise_tokens_per_record,
            "paraphrase_rate": self.paraphrase_rate,
            "oov_filler_rate": self.oov_filler_rate,
            "family_history_rate": self.family_history_rate,
            "word_dim": self.word_dim,
            "cui_dim": self.cui_dim,
            "seed": self.seed,
            "negation_cues": list(self.negation_cues),
            "uncertainty_cues": list(self.uncertainty_cues),
        }


def spec_from_dict(raw: Mapping) -> SynthSpec:
    try:
        kwargs = dict(raw)
        kwargs["diseases"] = tuple((name, tuple(aliases)) for name, aliases in raw["diseases"])
        for key in ("textual_mix", "intuitive_mix"):
            kwargs[key] = {DiseaseLabel.from_char(ch): float(v) for ch, v in raw[key].items()}
        for key in ("negation_cues", "uncertainty_cues"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return SynthSpec(**kwargs)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad corpus spec: {exc}") from None


def load_synth_spec(path: str | Path) -> SynthSpec:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"corpus spec {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"corpus spec {path}: expected a JSON object")
    return spec_from_dict(raw)


def default_diseases(count: int) -> tuple[tuple[str, tuple[str, ...]], ...]:
    """Synthetic diseases with two-token aliases so word windows are non-trivial."""
    return tuple(
        (f"Disease{k}", (f"cond{k} syndrome", f"cond{k}osis disorder")) for k in range(count)
    )


def apportion(proportions: Sequence[float], total: int) -> list[int]:
    """Largest-remainder rounding of `total * proportions` to integers.

    Floors first, then hands the leftover units to the largest fractional
    remainders, earlier classes winning exact ties. Deterministic, sums to
    `total`, and exact whenever the products are whole numbers.
    """
    exact = [p * total for p in proportions]
    counts = [int(np.floor(x)) for x in exact]
    remainders = [x - c for x, c in zip(exact, counts)]
    leftover = total - sum(counts)
    order = sorted(range(len(proportions)), key=lambda i: (-remainders[i], i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


@dataclass(frozen=True)
class GeneratedCorpus:
    """In-memory view of one generated corpus plus where its files landed."""

    out_dir: Path
    records: tuple[ClinicalRecord, ...]
    annotations: Mapping[TaskKind, AnnotationSet]
    files: Mapping[str, Path]

    @property
    def config_path(self) -> Path:
        return self.files["config"]


def _marker_token(disease_index: int) -> str:
    return f"mark{disease_index}"


def _mention_sentence(
    joint_textual: DiseaseLabel,
    alias: str,
    paraphrase: bool,
    cue: str | None,
) -> str | None:
    if joint_textual is DiseaseLabel.UNMENTIONED:
        return None
    if joint_textual is DiseaseLabel.PRESENT:
        if paraphrase:
            return f"ongoing {alias} noted again this visit."
        return f"patient reports {alias} today."
    assert cue is not None
    if joint_textual is DiseaseLabel.ABSENT:
        if paraphrase:
            return f"exam shows {cue} {alias} at this time."
        return f"patient {cue} {alias} today."
    if paraphrase:
        return f"plan is {cue} {alias} per team."
    return f"assessment notes {cue} {alias} today."


def _build_dictionary_rows(spec: SynthSpec) -> list[tuple[str, str, tuple[str, ...]]]:
    """(cui, tui, names) rows: disease concepts, status markers, anchor, decoy.

    Marker/anchor types come from the evaluated whitelist; the decoy's T170
    does not, so type filtering is observable on every record.
    """
    rows: list[tuple[str, str, tuple[str, ...]]] = []
    serial = 1

    def next_cui() -> str:
        nonlocal serial
        cui = f"S{serial:07d}"
        serial += 1
        return cui

    for k, (_, aliases) in enumerate(spec.diseases):
        rows.append((next_cui(), "T047", tuple(aliases)))
        mark = _marker_token(k)
        rows.append((next_cui(), "T033", (f"{mark} high",)))
        rows.append((next_cui(), "T033", (f"{mark} low",)))
        rows.append((next_cui(), "T184", (f"{mark} flat",)))
    rows.append((next_cui(), "T033", ("clinic visit",)))
    rows.append((next_cui(), "T170", ("chart review",)))
    return rows


def _assignments(spec: SynthSpec, rng: np.random.Generator) -> list[list[int]]:
    """Per disease, the joint-class index of every record, shuffled by seed."""
    joint = spec.joint_proportions()
    per_disease: list[list[int]] = []
    for _ in spec.diseases:
        counts = apportion(joint, spec.n_records)
        ordered: list[int] = []
        for class_idx, count in enumerate(counts):
            ordered.extend([class_idx] * count)
        slots = rng.permutation(spec.n_records)
        assigned = [0] * spec.n_records
        for position, class_idx in zip(slots, ordered):
            assigned[int(position)] = class_idx
        per_disease.append(assigned)
    return per_disease


def _record_text(
    spec: SynthSpec,
    record_index: int,
    assignments: list[list[int]],
    rng: np.random.Generator,
) -> str:
    sentences: list[str] = []
    family_block = ""
    if rng.random() < spec.family_history_rate:
        member = _FAMILY_MEMBERS[int(rng.integers(len(_FAMILY_MEMBERS)))]
        fam_disease = int(rng.integers(len(spec.diseases)))
        fam_alias = spec.diseases[fam_disease][1][0]
        family_block = f"FAMILY HISTORY: {member} with {fam_alias}.\n\n"

    for k, (_, aliases) in enumerate(spec.diseases):
        textual, intuitive = _JOINT_CLASSES[assignments[k][record_index]]
        paraphrase = rng.random() < spec.paraphrase_rate
        alias = aliases[-1] if paraphrase and len(aliases) > 1 else aliases[0]
        cue = None
        if textual is DiseaseLabel.ABSENT:
            cue = spec.negation_cues[int(rng.integers(len(spec.negation_cues)))]
        elif textual is DiseaseLabel.QUESTIONABLE:
            cue = spec.uncertainty_cues[int(rng.integers(len(spec.uncertainty_cues)))]
        mention = _mention_sentence(textual, alias, paraphrase, cue)
        if mention is not None:
            sentences.append(mention)
        level = {DiseaseLabel.PRESENT: "high", DiseaseLabel.ABSENT: "low"}.get(intuitive, "flat")
        sentences.append(f"lab panel shows {_marker_token(k)} {level} values.")

    filler = [f"filler{int(j)}" for j in rng.integers(spec.noise_vocab_size, size=spec.noise_tokens_per_record)]
    for start in range(0, len(filler), 5):
        sentences.append(" ".join(filler[start : start + 5]) + ".")
    sentences.append("routine clinic visit done.")
    sentences.append("chart review completed.")

    order = rng.permutation(len(sentences))
    body = " ".join(sentences[int(i)] for i in order)
    return family_block + body


def _embedding_table(keys: Sequence[str], dim: int, rng: np.random.Generator) -> EmbeddingTable:
    vectors = {key: rng.uniform(-0.5, 0.5, size=dim) for key in keys}
    return EmbeddingTable(dim=dim, vectors=vectors)


def _word_vector_keys(spec: SynthSpec) -> list[str]:
    keys: list[str] = []
    seen: set[str] = set()

    def add(token: str) -> None:
        if token not in seen:
            seen.add(token)
            keys.append(token)

    for _, aliases in spec.diseases:
        for alias in aliases:
            for token in alias.split():
                add(token.lower())
    kept = spec.noise_vocab_size - int(np.floor(spec.oov_filler_rate * spec.noise_vocab_size))
    for j in range(kept):
        add(f"filler{j}")
    return keys


def generate(spec: SynthSpec, out_dir: str | Path) -> GeneratedCorpus:
    """Write a complete runnable corpus into `out_dir` and return its pieces."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    assignments = _assignments(spec, rng)
    records = tuple(
        ClinicalRecord(id=str(i + 1), text=_record_text(spec, i, assignments, rng))
        for i in range(spec.n_records)
    )

    judgments: dict[TaskKind, dict[tuple[str, str], DiseaseLabel]] = {
        TaskKind.TEXTUAL: {},
        TaskKind.INTUITIVE: {},
    }
    for k, (name, _) in enumerate(spec.diseases):
        for i in range(spec.n_records):
            textual, intuitive = _JOINT_CLASSES[assignments[k][i]]
            judgments[TaskKind.TEXTUAL][(name, str(i + 1))] = textual
            judgments[TaskKind.INTUITIVE][(name, str(i + 1))] = intuitive
    annotations = {
        task: AnnotationSet(task=task, judgments=judgments[task]) for task in TaskKind
    }

    dictionary_rows = _build_dictionary_rows(spec)
    word_table = _embedding_table(_word_vector_keys(spec), spec.word_dim, rng)
    cui_table = _embedding_table([cui for cui, _, _ in dictionary_rows], spec.cui_dim, rng)

    files: dict[str, Path] = {}

    def write_bytes(key: str, filename: str, data: bytes) -> None:
        path = out / filename
        path.write_bytes(data)
        files[key] = path

    def write_text(key: str, filename: str, text: str) -> None:
        path = out / filename
        path.write_text(text, encoding="utf-8")
        files[key] = path

    write_bytes("records", "records.xml", records_to_xml(records))
    write_bytes("annotations_textual", "annotations-textual.xml", annotations_to_xml(annotations[TaskKind.TEXTUAL]))
    write_bytes("annotations_intuitive", "annotations-intuitive.xml", annotations_to_xml(annotations[TaskKind.INTUITIVE]))

    write_text(
        "lexicon",
        "lexicon.tsv",
        "".join(f"{name}\t{'|'.join(aliases)}\n" for name, aliases in spec.diseases),
    )
    cue_lines = ["[negation]"]
    cue_lines.extend(spec.negation_cues)
    cue_lines.append("[uncertainty]")
    cue_lines.extend(spec.uncertainty_cues)
    write_text("cues", "cues.txt", "\n".join(cue_lines) + "\n")
    write_text(
        "concepts",
        "concepts.tsv",
        "".join(f"{cui}\t{tui}\t{'|'.join(names)}\n" for cui, tui, names in dictionary_rows),
    )

    word_path = out / "word-vectors.txt"
    write_word2vec_text(word_path, word_table)
    files["word_vectors"] = word_path
    cui_path = out / "concept-vectors.txt"
    write_word2vec_text(cui_path, cui_table)
    files["cui_vectors"] = cui_path

    config = {
        "records": "records.xml",
        "annotations": {
            "textual": "annotations-textual.xml",
            "intuitive": "annotations-intuitive.xml",
        },
        "lexicon": "lexicon.tsv",
        "cues": "cues.txt",
        "concepts": "concepts.tsv",
        "word_vectors": "word-vectors.txt",
        "cui_vectors": "concept-vectors.txt",
        "model_dir": "models",
        "report_dir": "reports",
        "seed": spec.seed,
        "model": {},
    }
    write_text("config", "config.json", json.dumps(config, indent=2, sort_keys=True) + "\n")
    manifest = {"spec": spec.to_dict(), "files": sorted(p.name for p in files.values())}
    write_text("manifest", "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    return GeneratedCorpus(out_dir=out, records=records, annotations=annotations, files=files)
