"""Entity-wise scoring: NER P/R/F1, the grounded triple metric, and the
seen/unseen entity breakdown."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

from .data import Dataset, iou
from .errors import SpannerError
from .stage2 import EntityPrediction

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Scores:
    precision: float
    recall: float
    f1: float
    true_positive: int
    predicted: int
    gold: int

    @classmethod
    def from_counts(cls, tp: int, predicted: int, gold: int) -> "Scores":
        precision = tp / predicted if predicted else 0.0
        recall = tp / gold if gold else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(precision, recall, f1, tp, predicted, gold)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "true_positive": self.true_positive,
            "predicted": self.predicted,
            "gold": self.gold,
        }


@dataclass
class EvalResult:
    overall: Scores
    per_type: dict[str, Scores] = field(default_factory=dict)

    @property
    def precision(self) -> float:
        return self.overall.precision

    @property
    def recall(self) -> float:
        return self.overall.recall

    @property
    def f1(self) -> float:
        return self.overall.f1

    @property
    def counts(self) -> tuple[int, int, int]:
        return (self.overall.true_positive, self.overall.predicted, self.overall.gold)

    def to_dict(self) -> dict:
        payload = self.overall.to_dict()
        payload["per_type"] = {t: s.to_dict() for t, s in sorted(self.per_type.items())}
        return payload


def _gold_keys(gold: Dataset) -> list[tuple[str, int, int, str]]:
    keys = []
    for sentence in gold.sentences:
        for span in sentence.gold_spans():
            keys.append((sentence.id, span.start, span.end, span.entity_type))
    return keys


def _check_ids(predictions, gold: Dataset):
    known = {s.id for s in gold.sentences}
    for prediction in predictions:
        if prediction.sentence_id not in known:
            raise SpannerError(
                f"prediction references unknown sentence {prediction.sentence_id!r}"
            )


def _result_from_matches(
    tp_keys: list[tuple[str, int, int, str]],
    predictions: list[EntityPrediction],
    gold_keys: list[tuple[str, int, int, str]],
) -> EvalResult:
    types = sorted(
        {k[3] for k in gold_keys} | {p.span.entity_type for p in predictions}
    )
    per_type = {}
    for t in types:
        per_type[t] = Scores.from_counts(
            sum(1 for k in tp_keys if k[3] == t),
            sum(1 for p in predictions if p.span.entity_type == t),
            sum(1 for k in gold_keys if k[3] == t),
        )
    overall = Scores.from_counts(len(tp_keys), len(predictions), len(gold_keys))
    return EvalResult(overall, per_type)


def evaluate_ner(predictions: list[EntityPrediction], gold: Dataset) -> EvalResult:
    """Micro P/R/F1 under exact one-to-one (sentence, start, end, type)
    matching; duplicate predictions become false positives."""
    _check_ids(predictions, gold)
    gold_keys = _gold_keys(gold)
    budget = Counter(gold_keys)
    tp_keys = []
    for prediction in predictions:
        key = (
            prediction.sentence_id,
            prediction.span.start,
            prediction.span.end,
            prediction.span.entity_type,
        )
        if budget[key] > 0:
            budget[key] -= 1
            tp_keys.append(key)
    return _result_from_matches(tp_keys, list(predictions), gold_keys)


def _region_correct(
    prediction: EntityPrediction, annotation, iou_threshold: float
) -> bool:
    if annotation is None or not annotation.groundable:
        if prediction.region is not None and annotation is None:
            log.warning(
                "prediction for %s carries a region but the sentence has no "
                "grounding metadata; counted incorrect",
                prediction.sentence_id,
            )
        return prediction.region is None
    if prediction.region is None:
        return False
    return any(iou(prediction.region, box) > iou_threshold for box in annotation.boxes)


def evaluate_gmner(
    predictions: list[EntityPrediction],
    gold: Dataset,
    iou_threshold: float = 0.5,
) -> EvalResult:
    """Triple-correct scoring: span, type, and region must all be right.

    Region correctness: an ungroundable gold entity demands a None region; a
    groundable one demands IoU strictly above the threshold with some gold
    box. A span+type match consumes its gold span either way.
    """
    _check_ids(predictions, gold)
    gold_keys = _gold_keys(gold)
    budget = Counter(gold_keys)

    annotations = {}
    for sentence in gold.sentences:
        for index, span in enumerate(sentence.gold_spans()):
            key = (sentence.id, span.start, span.end, span.entity_type)
            annotations.setdefault(key, []).append(sentence.grounding.get(index))

    consumed: Counter = Counter()
    tp_keys = []
    for prediction in predictions:
        key = (
            prediction.sentence_id,
            prediction.span.start,
            prediction.span.end,
            prediction.span.entity_type,
        )
        if budget[key] > consumed[key]:
            annotation = annotations[key][consumed[key]]
            consumed[key] += 1
            if _region_correct(prediction, annotation, iou_threshold):
                tp_keys.append(key)
    return _result_from_matches(tp_keys, list(predictions), gold_keys)


def normalize_surface(surface: str) -> str:
    """Whitespace collapse, case preserved: the seen/unseen match key."""
    return " ".join(surface.split())


@dataclass(frozen=True)
class SeenSplit:
    seen_surfaces: frozenset[str]

    @classmethod
    def from_train(cls, train: Dataset) -> "SeenSplit":
        surfaces = {
            normalize_surface(span.surface)
            for sentence in train.sentences
            for span in sentence.gold_spans()
        }
        return cls(frozenset(surfaces))

    def is_seen(self, surface: str) -> bool:
        return normalize_surface(surface) in self.seen_surfaces


def seen_unseen_report(
    predictions: list[EntityPrediction],
    gold_test: Dataset,
    train: Dataset,
) -> tuple[EvalResult, EvalResult]:
    """Evaluate separately over test entities whose surface occurs as a gold
    train entity (seen) and the rest (unseen).

    Matched predictions follow their gold span's partition; unmatched ones
    are attributed by their own surface. An empty partition reports zero
    counts and zero scores.
    """
    _check_ids(predictions, gold_test)
    split = SeenSplit.from_train(train)

    gold_seen: list[tuple] = []
    gold_unseen: list[tuple] = []
    surface_by_key: dict[tuple, list[str]] = {}
    for sentence in gold_test.sentences:
        for span in sentence.gold_spans():
            key = (sentence.id, span.start, span.end, span.entity_type)
            surface_by_key.setdefault(key, []).append(span.surface)
            (gold_seen if split.is_seen(span.surface) else gold_unseen).append(key)

    budget = Counter(gold_seen) + Counter(gold_unseen)
    preds_seen: list[EntityPrediction] = []
    preds_unseen: list[EntityPrediction] = []
    tp_seen: list[tuple] = []
    tp_unseen: list[tuple] = []
    for prediction in predictions:
        key = (
            prediction.sentence_id,
            prediction.span.start,
            prediction.span.end,
            prediction.span.entity_type,
        )
        if budget[key] > 0:
            budget[key] -= 1
            seen = split.is_seen(surface_by_key[key][0])
            (tp_seen if seen else tp_unseen).append(key)
            (preds_seen if seen else preds_unseen).append(prediction)
        else:
            seen = split.is_seen(prediction.span.surface)
            (preds_seen if seen else preds_unseen).append(prediction)
    return (
        _result_from_matches(tp_seen, preds_seen, gold_seen),
        _result_from_matches(tp_unseen, preds_unseen, gold_unseen),
    )
