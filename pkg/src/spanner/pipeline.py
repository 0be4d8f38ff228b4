"""End-to-end orchestration shared by the CLI commands and the test suite.

The training path mirrors the two-stage design: stage 1 trains (optionally
as a teacher/student pair, shipping the student), fold harvesting produces
non-entity rows, knowledge bundles are assembled per candidate, stage 2
trains over gold rows plus negatives, and prediction chains candidate
detection -> knowledge -> recognition.
"""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path

from .config import RunConfig
from .data import (
    NON_ENTITY,
    Dataset,
    GroundingAnnotation,
    Span,
    TaggedSentence,
    read_conll,
    read_multimodal_jsonl,
)
from .distill import DistillMode, distill
from .errors import ConfigError, SpannerError
from .evaluation import EvalResult, evaluate_gmner, evaluate_ner
from .knowledge import KnowledgeBundle, KnowledgeConfig, WikiClient, assemble_bundle
from .stage1 import (
    SpanCandidate,
    Stage1Model,
    detect_candidates,
    gold_candidates,
    harvest_fold_negatives,
    train_stage1,
)
from .stage2 import (
    EntityPrediction,
    Stage2Model,
    TrainingCandidate,
    predict,
    train_stage2,
)
from .util import atomic_write_text, derive_seed

log = logging.getLogger(__name__)


def load_dataset(config: RunConfig, base_dir: str | Path = ".") -> tuple[Dataset, Dataset]:
    """(train, test) per the dataset paths; test falls back to train."""
    base = Path(base_dir)
    paths = config.dataset
    if not paths.train:
        raise ConfigError("dataset.train is not set")

    def read(path_str: str, split: str) -> Dataset:
        path = base / path_str
        if paths.format == "conll":
            data = read_conll(path, merge_dev=paths.merge_dev and split == "train",
                              repair=paths.repair_bio)
        else:
            data = read_multimodal_jsonl(path, repair=paths.repair_bio)
        return replace(data, split=split)

    train = read(paths.train, "train")
    test = read(paths.test, "test") if paths.test else replace(train, split="test")
    if config.task == "gmner":
        _require_grounding(train)
    return train, test


def _require_grounding(dataset: Dataset):
    for sentence in dataset.sentences:
        spans = sentence.gold_spans()
        for index in range(len(spans)):
            if index not in sentence.grounding:
                raise ConfigError(
                    f"gmner task needs grounding annotations: sentence "
                    f"{sentence.id} span {index} has none"
                )


def wiki_client(config: RunConfig, base_dir: str | Path = ".") -> WikiClient:
    knowledge = config.knowledge
    resolved = {}
    if knowledge.snapshot_path:
        resolved["snapshot_path"] = str(Path(base_dir) / knowledge.snapshot_path)
    if knowledge.cache_dir:
        resolved["cache_dir"] = str(Path(base_dir) / knowledge.cache_dir)
    cfg = KnowledgeConfig(**{**_knowledge_dict(knowledge), **resolved})
    return WikiClient(cfg)


def _knowledge_dict(knowledge: KnowledgeConfig) -> dict:
    return {
        "cache_dir": knowledge.cache_dir,
        "snapshot_path": knowledge.snapshot_path,
        "online": knowledge.online,
        "url_template": knowledge.url_template,
        "max_wiki_chars": knowledge.max_wiki_chars,
        "max_objects": knowledge.max_objects,
        "timeout_seconds": knowledge.timeout_seconds,
    }


def train_stage1_for_run(
    config: RunConfig, train: Dataset, seed: int
) -> tuple[Stage1Model, Stage1Model]:
    """(teacher, shipped) stage-1 models; shipped is the student when
    distillation is active, the teacher otherwise."""

    def train_fn(dataset, cfg, inner_seed, teacher=None, distill_mode=DistillMode.OFF):
        return train_stage1(
            dataset, cfg, inner_seed,
            encoder_opts=config.encoder,
            teacher=teacher,
            distill_mode=distill_mode,
        )

    teacher, student = distill(
        train, train_fn, config.stage1, config.distill_mode, derive_seed(seed, "stage1")
    )
    return teacher, student


def harvest_for_run(config: RunConfig, train: Dataset, seed: int) -> list[SpanCandidate]:
    return harvest_fold_negatives(
        train,
        config.stage1,
        folds=config.folds,
        seed=derive_seed(seed, "harvest"),
        encoder_opts=config.encoder,
    )


def training_rows(
    train: Dataset, negatives: list[SpanCandidate], needs_grounding: bool
) -> list[TrainingCandidate]:
    """Gold spans with their types plus harvested non-entity rows."""
    rows = []
    for sentence in train.sentences:
        for index, span in enumerate(sentence.gold_spans()):
            annotation = sentence.grounding.get(index)
            if needs_grounding and annotation is None:
                annotation = GroundingAnnotation.from_boxes(None)
            rows.append(
                TrainingCandidate(
                    candidate=SpanCandidate(sentence.id, span, source="gold"),
                    gold_type=span.entity_type,
                    grounding=annotation,
                )
            )
    ungroundable = GroundingAnnotation.from_boxes(None)
    for candidate in negatives:
        rows.append(
            TrainingCandidate(
                candidate=candidate,
                gold_type=NON_ENTITY,
                grounding=ungroundable if needs_grounding else None,
            )
        )
    return rows


def bundles_for(
    candidates: list[SpanCandidate],
    sentences: dict[str, TaggedSentence],
    client: WikiClient,
) -> list[KnowledgeBundle]:
    out = []
    for candidate in candidates:
        sentence = sentences.get(candidate.sentence_id)
        if sentence is None:
            raise SpannerError(f"no sentence with id {candidate.sentence_id!r}")
        out.append(assemble_bundle(candidate, sentence, client))
    return out


def train_stage2_for_run(
    config: RunConfig,
    rows: list[TrainingCandidate],
    train: Dataset,
    client: WikiClient,
    seed: int,
) -> tuple[Stage2Model, Stage2Model]:
    sentences = train.by_id()
    bundles = bundles_for([row.candidate for row in rows], sentences, client)

    def train_fn(dataset_rows, cfg, inner_seed, teacher=None, distill_mode=DistillMode.OFF):
        return train_stage2(
            dataset_rows, bundles, sentences, train.entity_types, cfg, inner_seed,
            encoder_opts=config.encoder,
            teacher=teacher,
            distill_mode=distill_mode,
        )

    teacher, student = distill(
        rows, train_fn, config.stage2, config.stage2_distill_mode(),
        derive_seed(seed, "stage2"),
    )
    return teacher, student


def predict_for_run(
    config: RunConfig,
    stage1: Stage1Model,
    stage2: Stage2Model,
    dataset: Dataset,
    client: WikiClient,
) -> list[EntityPrediction]:
    """detect candidates -> assemble knowledge -> classify and ground."""
    sentences = dataset.by_id()
    candidates = detect_candidates(stage1, dataset.sentences)
    bundles = bundles_for(candidates, sentences, client)
    return predict(stage2, candidates, bundles, sentences, config.stage2)


def evaluate_for_run(
    config: RunConfig, predictions: list[EntityPrediction], gold: Dataset
) -> dict[str, EvalResult]:
    reports = {"ner": evaluate_ner(predictions, gold)}
    if config.task == "gmner":
        reports["gmner"] = evaluate_gmner(predictions, gold)
    return reports


def write_candidates_jsonl(path: str | Path, candidates: list[SpanCandidate]):
    lines = [
        json.dumps(
            {
                "sentence_id": c.sentence_id,
                "start": c.span.start,
                "end": c.span.end,
                "source": c.source,
            }
        )
        for c in candidates
    ]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_candidates_jsonl(
    path: str | Path, sentences: dict[str, TaggedSentence]
) -> list[SpanCandidate]:
    out = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            sentence = sentences.get(raw["sentence_id"])
            if sentence is None:
                raise SpannerError(f"candidate references unknown sentence {raw['sentence_id']!r}")
            span = Span(
                raw["start"], raw["end"], None,
                sentence.surface(raw["start"], raw["end"]),
            )
            out.append(SpanCandidate(raw["sentence_id"], span, raw["source"]))
    return out


def write_predictions_jsonl(path: str | Path, predictions: list[EntityPrediction]):
    lines = []
    for p in predictions:
        lines.append(
            json.dumps(
                {
                    "sentence_id": p.sentence_id,
                    "start": p.span.start,
                    "end": p.span.end,
                    "type": p.span.entity_type,
                    "region": p.region.as_list() if p.region else None,
                }
            )
        )
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_predictions_jsonl(
    path: str | Path, sentences: dict[str, TaggedSentence]
) -> list[EntityPrediction]:
    from .data import BoundingBox

    out = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            sentence = sentences.get(raw["sentence_id"])
            surface = sentence.surface(raw["start"], raw["end"]) if sentence else ""
            region = BoundingBox(*raw["region"]) if raw.get("region") else None
            out.append(
                EntityPrediction(
                    sentence_id=raw["sentence_id"],
                    span=Span(raw["start"], raw["end"], raw["type"], surface),
                    region=region,
                )
            )
    return out


def run_end_to_end(config: RunConfig, base_dir: str | Path, seed: int) -> dict:
    """The whole pipeline for one seed; returns models, predictions, and
    evaluation reports keyed by metric name."""
    train, test = load_dataset(config, base_dir)
    client = wiki_client(config, base_dir)
    _teacher1, stage1 = train_stage1_for_run(config, train, seed)
    negatives = harvest_for_run(config, train, seed)
    rows = training_rows(train, negatives, needs_grounding=config.task == "gmner")
    _teacher2, stage2 = train_stage2_for_run(config, rows, train, client, seed)
    predictions = predict_for_run(config, stage1, stage2, test, client)
    reports = evaluate_for_run(config, predictions, test)
    return {
        "stage1": stage1,
        "stage2": stage2,
        "negatives": negatives,
        "predictions": predictions,
        "reports": reports,
    }
