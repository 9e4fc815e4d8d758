"""Command-line pipeline: gen, triggers, train, classify, evaluate, ttest.

Runs are driven by a JSON config whose paths are resolved relative to the
config file, with command-line flags winning over config values. Exit codes:
0 success, 1 usage, 2 bad data or configuration, 3 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from . import baselines, kgcnn
from .cascade import (
    ChannelInputs,
    DecisionSource,
    PipelineResources,
    PredictionRow,
    PreparedRecord,
    RuleOnlyPredictor,
    build_model_examples,
    prepare_record,
    read_predictions,
    route_record,
    write_predictions,
)
from .corpus import (
    ClinicalRecord,
    DiseaseLabel,
    TaskKind,
    model_class_pair,
    parse_annotations_xml,
    parse_records_xml,
)
from .embeddings import load_word2vec_text
from .errors import ConfigError, DataFormatError, InternalError, PhenocascadeError
from .evaluation import paired_t_test
from .linker import load_concept_dictionary
from .preprocess import load_abbreviations
from .report import (
    EvalReport,
    build_task_report,
    render_loss_curves,
    render_report_figures,
    report_to_json,
    report_to_text,
    report_to_tsv,
)
from .synthgen import generate, load_synth_spec
from .trigger import find_trigger_phrases, load_cue_lexicon, load_disease_lexicons

logger = logging.getLogger(__name__)

MODEL_KINDS = ("kgcnn", "logreg", "svm", "rules")
TRAINABLE_KINDS = ("kgcnn", "logreg", "svm")
LINEAR_OPTION_KEYS = frozenset({"lr", "epochs", "l2", "c"})

DATA_DIR = Path(__file__).parent / "data"


def packaged_data_path(name: str) -> Path:
    """Path of a resource shipped with the package (diseases.tsv, cues.txt, ...)."""
    path = DATA_DIR / name
    if not path.exists():
        raise ConfigError(f"no packaged data file named {name!r}")
    return path


class UsageError(Exception):
    """Bad command line; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: A003 - argparse API
        raise UsageError(f"{self.prog}: {message}")


@dataclass(frozen=True)
class RunConfig:
    """One run's file layout plus model selection, after flag overrides."""

    base_dir: Path
    records: Path
    annotations: Mapping[TaskKind, Path]
    lexicon: Path
    cues: Path
    concepts: Path
    abbreviations: Path
    word_vectors: Path
    cui_vectors: Path
    model_dir: Path
    report_dir: Path
    seed: int
    model_kind: str
    task: TaskKind | None
    model_options: Mapping[str, object]

    def tasks(self, require_annotations: bool) -> list[TaskKind]:
        if self.task is not None:
            if require_annotations and self.task not in self.annotations:
                raise ConfigError(f"config lists no annotations for task {self.task.value!r}")
            return [self.task]
        if require_annotations:
            selected = [task for task in TaskKind if task in self.annotations]
            if not selected:
                raise ConfigError("config lists no annotation files for either task")
            return selected
        return list(TaskKind)


def _parse_option_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_run_config(args: argparse.Namespace) -> RunConfig:
    config_path = Path(args.config)
    if not config_path.exists():
        raise ConfigError(f"config file {config_path} does not exist")
    try:
        raw = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {config_path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config {config_path}: expected a JSON object")

    base = config_path.parent

    def path_of(value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else base / p

    try:
        annotations_raw = raw.get("annotations", {})
        annotations = {
            TaskKind.from_name(name): path_of(value) for name, value in annotations_raw.items()
        }
        config = RunConfig(
            base_dir=base,
            records=path_of(getattr(args, "records", None) or raw["records"]),
            annotations=annotations,
            lexicon=path_of(raw["lexicon"]),
            cues=path_of(raw["cues"]),
            concepts=path_of(raw["concepts"]),
            abbreviations=(
                path_of(raw["abbreviations"])
                if "abbreviations" in raw
                else packaged_data_path("abbreviations.tsv")
            ),
            word_vectors=path_of(raw["word_vectors"]),
            cui_vectors=path_of(raw["cui_vectors"]),
            model_dir=path_of(getattr(args, "model_dir", None) or raw.get("model_dir", "models")),
            report_dir=path_of(getattr(args, "report_dir", None) or raw.get("report_dir", "reports")),
            seed=args.seed if getattr(args, "seed", None) is not None else int(raw.get("seed", 0)),
            model_kind=getattr(args, "model_kind", None) or raw.get("model_kind", "kgcnn"),
            task=TaskKind.from_name(args.task) if getattr(args, "task", None) else None,
            model_options={
                **raw.get("model", {}),
                **{
                    key: _parse_option_value(value)
                    for key, _, value in (opt.partition("=") for opt in getattr(args, "model_opt", None) or [])
                },
            },
        )
    except KeyError as exc:
        raise ConfigError(f"config {config_path} is missing key {exc}") from None
    if config.model_kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {config.model_kind!r}; expected one of {', '.join(MODEL_KINDS)}")
    return config


def _require_paths(pairs: Sequence[tuple[str, Path]]) -> None:
    for name, path in pairs:
        if not path.exists():
            raise ConfigError(f"{name} path {path} does not exist")


def _load_resources(config: RunConfig) -> PipelineResources:
    _require_paths(
        [
            ("lexicon", config.lexicon),
            ("cues", config.cues),
            ("concepts", config.concepts),
            ("abbreviations", config.abbreviations),
        ]
    )
    return PipelineResources(
        lexicons=tuple(load_disease_lexicons(config.lexicon)),
        cues=load_cue_lexicon(config.cues),
        concept_dictionary=tuple(load_concept_dictionary(config.concepts)),
        abbreviations=load_abbreviations(config.abbreviations),
    )


def _load_records(config: RunConfig) -> list[ClinicalRecord]:
    _require_paths([("records", config.records)])
    return parse_records_xml(config.records.read_bytes(), source=str(config.records))


def _load_annotations(config: RunConfig, task: TaskKind):
    path = config.annotations.get(task)
    if path is None:
        raise ConfigError(f"config lists no annotations for task {task.value!r}")
    _require_paths([(f"{task.value} annotations", path)])
    return parse_annotations_xml(path.read_bytes(), task, source=str(path))


def _load_tables(config: RunConfig):
    _require_paths([("word_vectors", config.word_vectors), ("cui_vectors", config.cui_vectors)])
    return (
        load_word2vec_text(config.word_vectors, oov_seed=config.seed),
        load_word2vec_text(config.cui_vectors, oov_seed=config.seed),
    )


def disease_slug(name: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", name.lower()).strip("-")
    if not slug:
        raise ConfigError(f"disease name {name!r} has no sluggable characters")
    return slug


def _slug_map(diseases: Sequence[str]) -> dict[str, str]:
    slugs: dict[str, str] = {}
    for disease in diseases:
        slug = disease_slug(disease)
        clash = [d for d, s in slugs.items() if s == slug]
        if clash:
            raise ConfigError(f"diseases {clash[0]!r} and {disease!r} collide on model file name {slug!r}")
        slugs[disease] = slug
    return slugs


def _require_numeric_options(options: Mapping[str, object]) -> None:
    for key, value in options.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"option {key!r} must be a number, got {value!r}")


def _cnn_config(config: RunConfig) -> kgcnn.ModelConfig:
    options = dict(config.model_options)
    known = {f.name for f in dataclasses.fields(kgcnn.ModelConfig)}
    unknown = set(options) - known
    if unknown:
        raise ConfigError(f"unknown kgcnn options: {sorted(unknown)}")
    _require_numeric_options(options)
    options.setdefault("seed", config.seed)
    return kgcnn.ModelConfig(**options)


def _linear_options(config: RunConfig) -> dict:
    options = dict(config.model_options)
    unknown = set(options) - LINEAR_OPTION_KEYS
    if unknown:
        raise ConfigError(f"options {sorted(unknown)} do not apply to {config.model_kind}")
    _require_numeric_options(options)
    return options


def cmd_gen(args: argparse.Namespace) -> None:
    spec_path = Path(args.spec)
    if not spec_path.exists():
        raise ConfigError(f"spec path {spec_path} does not exist")
    corpus = generate(load_synth_spec(spec_path), args.out)
    print(f"generated {len(corpus.records)} records in {corpus.out_dir}")


def cmd_triggers(args: argparse.Namespace) -> None:
    config = load_run_config(args)
    resources = _load_resources(config)
    records = _load_records(config)
    out_path = Path(args.out) if args.out else config.report_dir / "triggers.jsonl"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(out_path, "w", encoding="utf-8") as handle:
        for record in records:
            prepared = prepare_record(record, resources)
            for lexicon in resources.lexicons:
                for trigger in find_trigger_phrases(prepared.tok, lexicon, resources.cues):
                    handle.write(
                        json.dumps(
                            {
                                "id": record.id,
                                "disease": trigger.disease,
                                "polarity": trigger.polarity.name.lower(),
                                "surface": trigger.surface,
                                "mention": list(trigger.mention_span),
                                "cue": list(trigger.cue_span) if trigger.cue_span else None,
                            }
                        )
                        + "\n"
                    )
                    count += 1
    print(f"wrote {count} trigger phrases to {out_path}")


def cmd_train(args: argparse.Namespace) -> None:
    config = load_run_config(args)
    if config.model_kind not in TRAINABLE_KINDS:
        raise ConfigError("the rules baseline has no trained parameters; nothing to train")
    resources = _load_resources(config)
    records = _load_records(config)
    word_table, cui_table = _load_tables(config)

    for task in config.tasks(require_annotations=True):
        annotations = _load_annotations(config, task)
        examples = build_model_examples(records, annotations, task, resources)
        class_pair = model_class_pair(task)
        slugs = _slug_map(list(examples))
        task_dir = config.model_dir / task.value
        task_dir.mkdir(parents=True, exist_ok=True)
        curves: dict[str, list[float]] = {}

        for disease, disease_examples in examples.items():
            if not disease_examples:
                raise ConfigError(f"no usable training examples for disease {disease!r}, task {task.value!r}")
            model_path = task_dir / f"{slugs[disease]}.npz"
            if config.model_kind == "kgcnn":
                cnn_config = _cnn_config(config)
                encoded = [
                    (kgcnn.encode_input(ch.words, ch.cuis, word_table, cui_table, cnn_config), class_pair.index(gold))
                    for ch, gold in disease_examples
                ]
                losses: list[float] = []
                model = kgcnn.train(encoded, cnn_config, class_pair, on_epoch=lambda _e, l: losses.append(l))
                kgcnn.save_model(model_path, model)
                curves[disease] = losses
                loss_path = task_dir / f"{slugs[disease]}-loss.tsv"
                loss_path.write_text(
                    "epoch\tmean_loss\n"
                    + "".join(f"{epoch + 1}\t{value:.6f}\n" for epoch, value in enumerate(losses)),
                    encoding="utf-8",
                )
            else:
                vocab = baselines.build_vocab(ch.words for ch, _ in disease_examples)
                pairs = [
                    (baselines.featurize(ch.words, vocab), class_pair.index(gold))
                    for ch, gold in disease_examples
                ]
                options = _linear_options(config)
                if config.model_kind == "logreg":
                    model = baselines.train_logreg(
                        pairs,
                        vocab,
                        class_pair,
                        lr=options.get("lr", baselines.DEFAULT_LR),
                        epochs=options.get("epochs", baselines.DEFAULT_EPOCHS),
                        l2=options.get("l2", baselines.DEFAULT_L2),
                    )
                else:
                    model = baselines.train_linear_svm(
                        pairs,
                        vocab,
                        class_pair,
                        lr=options.get("lr", baselines.DEFAULT_LR),
                        epochs=options.get("epochs", baselines.DEFAULT_EPOCHS),
                        c=options.get("c", baselines.DEFAULT_C),
                    )
                baselines.save_linear_model(model_path, model)
            logger.info("trained %s/%s -> %s", task.value, disease, model_path)

        if curves:
            config.report_dir.mkdir(parents=True, exist_ok=True)
            render_loss_curves(curves, config.report_dir / f"loss-{task.value}.png")
    print(f"models written to {config.model_dir}")


@dataclass(frozen=True)
class _LinearPredictor:
    model: baselines.LinearModel
    source_name: str = "model"

    def predict_label(self, channels: ChannelInputs):
        return baselines.predict_linear(self.model, baselines.featurize(channels.words, self.model.vocab))


def _classify_disease(
    config: RunConfig,
    task: TaskKind,
    disease: str,
    slug: str,
    records: Sequence[ClinicalRecord],
    prepared: Mapping[str, PreparedRecord],
    resources: PipelineResources,
    tables,
) -> list[PredictionRow]:
    lexicon = resources.lexicon_for(disease)
    decisions: dict[str, tuple[DiseaseLabel, str]] = {}
    deferred: list[tuple[str, ChannelInputs]] = []
    for record in records:
        decision, channels = route_record(prepared[record.id], lexicon, resources.cues, task)
        if decision.source is not DecisionSource.DEFERRED:
            assert decision.label is not None
            decisions[record.id] = (decision.label, decision.source.value)
        else:
            deferred.append((record.id, channels))

    if deferred:
        model_path = config.model_dir / task.value / f"{slug}.npz"
        if config.model_kind == "kgcnn":
            if not model_path.exists():
                raise ConfigError(f"no trained model for disease {disease!r}, task {task.value!r} at {model_path}")
            model = kgcnn.load_model(model_path)
            word_table, cui_table = tables
            # One canonical batched pass: chunking depends only on the fixed
            # batch size, so repeated runs see identical GEMM shapes and
            # produce bit-identical probabilities.
            inputs = [
                kgcnn.encode_input(ch.words, ch.cuis, word_table, cui_table, model.config)
                for _, ch in deferred
            ]
            for (record_id, _), (label, _) in zip(deferred, kgcnn.predict_batch(model, inputs)):
                decisions[record_id] = (label, "model")
        elif config.model_kind in ("logreg", "svm"):
            if not model_path.exists():
                raise ConfigError(f"no trained model for disease {disease!r}, task {task.value!r} at {model_path}")
            linear = baselines.load_linear_model(model_path)
            if linear.kind != config.model_kind:
                raise ConfigError(
                    f"model file {model_path} holds a {linear.kind!r} model, config asks for {config.model_kind!r}"
                )
            predictor = _LinearPredictor(linear)
            for record_id, channels in deferred:
                label, _ = predictor.predict_label(channels)
                decisions[record_id] = (label, predictor.source_name)
        else:
            predictor = RuleOnlyPredictor(task=task)
            for record_id, channels in deferred:
                label, _ = predictor.predict_label(channels)
                decisions[record_id] = (label, predictor.source_name)

    rows = []
    for record in records:
        label, source = decisions[record.id]
        rows.append(
            PredictionRow(record_id=record.id, disease=disease, task=task, label=label, source=source)
        )
    return rows


def cmd_classify(args: argparse.Namespace) -> None:
    config = load_run_config(args)
    resources = _load_resources(config)
    records = _load_records(config)
    tables = _load_tables(config) if config.model_kind == "kgcnn" else None
    prepared = {record.id: prepare_record(record, resources) for record in records}
    diseases = [lexicon.disease for lexicon in resources.lexicons]
    slugs = _slug_map(diseases)

    config.report_dir.mkdir(parents=True, exist_ok=True)
    for task in config.tasks(require_annotations=False):
        rows: list[PredictionRow] = []
        for disease in diseases:
            rows.extend(
                _classify_disease(config, task, disease, slugs[disease], records, prepared, resources, tables)
            )
        out_path = config.report_dir / f"predictions-{task.value}.jsonl"
        write_predictions(out_path, rows)
        print(f"wrote {len(rows)} predictions to {out_path}")


def cmd_evaluate(args: argparse.Namespace) -> None:
    config = load_run_config(args)
    predictions_dir = Path(args.predictions_dir) if args.predictions_dir else config.report_dir
    task_reports = []
    for task in config.tasks(require_annotations=True):
        annotations = _load_annotations(config, task)
        predictions_path = predictions_dir / f"predictions-{task.value}.jsonl"
        _require_paths([(f"{task.value} predictions", predictions_path)])
        task_reports.append(build_task_report(annotations, read_predictions(predictions_path)))
    report = EvalReport(tasks=tuple(task_reports))

    config.report_dir.mkdir(parents=True, exist_ok=True)
    (config.report_dir / "report.json").write_text(report_to_json(report), encoding="utf-8")
    (config.report_dir / "report.tsv").write_text(report_to_tsv(report), encoding="utf-8")
    text = report_to_text(report)
    (config.report_dir / "report.txt").write_text(text, encoding="utf-8")
    figures = render_report_figures(report, config.report_dir)
    print(text, end="")
    print(f"report files in {config.report_dir} ({', '.join(p.name for p in figures)})")


def cmd_ttest(args: argparse.Namespace) -> None:
    task = TaskKind.from_name(args.task)
    metric_key = f"{args.metric}_f1"

    def overall_scores_from(paths: Sequence[str]) -> list[float]:
        values = []
        for raw_path in paths:
            path = Path(raw_path)
            if not path.exists():
                raise ConfigError(f"report path {path} does not exist")
            try:
                payload = json.loads(path.read_text(encoding="utf-8"))
                values.append(float(payload["tasks"][task.value]["overall"][metric_key]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataFormatError(f"report {path} lacks overall {args.metric} for {task.value}: {exc}") from None
        return values

    a_scores = overall_scores_from(args.a)
    b_scores = overall_scores_from(args.b)
    if len(a_scores) != len(b_scores):
        raise ConfigError(f"paired test needs equal run counts, got {len(a_scores)} vs {len(b_scores)}")
    result = paired_t_test(a_scores, b_scores)
    payload = {
        "task": task.value,
        "metric": args.metric,
        "n": len(a_scores),
        "mean_a": sum(a_scores) / len(a_scores),
        "mean_b": sum(b_scores) / len(b_scores),
        "t": result.statistic,
        "p": result.p_value,
        "df": result.df,
        "degenerate": result.degenerate,
    }
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    print(
        f"paired t-test ({task.value} {args.metric} F1, n={len(a_scores)}): "
        f"t={result.statistic:.6g} p={result.p_value:.6g}"
        + (" [degenerate: zero variance]" if result.degenerate else "")
    )


def _add_config_arguments(parser: argparse.ArgumentParser, with_records: bool = False) -> None:
    parser.add_argument("--config", required=True, help="run config JSON; paths resolve relative to it")
    parser.add_argument("--task", choices=[t.value for t in TaskKind], help="restrict to one task")
    parser.add_argument("--model-kind", choices=list(MODEL_KINDS), dest="model_kind", help="classifier for deferred records")
    parser.add_argument("--model-dir", dest="model_dir", help="override the model directory")
    parser.add_argument("--report-dir", dest="report_dir", help="override the report directory")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument(
        "--model-opt",
        action="append",
        dest="model_opt",
        metavar="KEY=VALUE",
        help="model hyperparameter override; repeatable",
    )
    if with_records:
        parser.add_argument("--records", help="override the records XML path")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="phenocascade", description="Hybrid rule/CNN disease-status classifier.")
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("spec", help="corpus spec JSON")
    p.add_argument("out", help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("triggers", help="dump trigger phrases as JSONL")
    _add_config_arguments(p, with_records=True)
    p.add_argument("--out", help="output path (default: <report_dir>/triggers.jsonl)")
    p.set_defaults(func=cmd_triggers)

    p = sub.add_parser("train", help="train one model per disease and task")
    _add_config_arguments(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="label records with rules plus the trained model")
    _add_config_arguments(p, with_records=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="score predictions against gold annotations")
    _add_config_arguments(p)
    p.add_argument("--predictions-dir", dest="predictions_dir", help="where prediction files live (default: report dir)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ttest", help="paired t-test between two sets of evaluation reports")
    p.add_argument("--a", nargs="+", required=True, metavar="REPORT", help="report.json files for side A")
    p.add_argument("--b", nargs="+", required=True, metavar="REPORT", help="report.json files for side B")
    p.add_argument("--task", required=True, choices=[t.value for t in TaskKind])
    p.add_argument("--metric", choices=["macro", "micro"], default="macro")
    p.add_argument("--out", help="also write the result as JSON")
    p.set_defaults(func=cmd_ttest)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except (DataFormatError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InternalError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3
    except PhenocascadeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
