"""Entity recognition over stage-1 candidates.

Each candidate's prompt runs through the encoder; the mask-token
representation feeds a linear classification head over the entity types plus
the reserved non-entity class, and each object-token representation feeds a
linear + sigmoid head predicting that object's overlap with the entity's
true region. The training loss is ``classification + lambda * grounding``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import (
    NON_ENTITY,
    BoundingBox,
    GroundingAnnotation,
    ObjectDetail,
    Span,
    TaggedSentence,
    iou,
)
from .distill import DistillMode, distill_loss
from .errors import SpannerError, TrainingDivergedError
from .knowledge import KnowledgeBundle, PromptSequence, build_prompt, prompt_tokens
from .nn import (
    EncoderConfig,
    ParameterStore,
    Tensor,
    add_linear_head,
    apply_linear_head,
    backward,
    binary_cross_entropy,
    forward_encoder,
    init_encoder_params,
    optimizer_step,
)
from .nn.losses import ClassDistribution, cross_entropy
from .nn.params import load_checkpoint, save_checkpoint
from .stage1 import DESK_ENCODER, SpanCandidate
from .util import derive_seed
from .vocab import MASK, OBJ, UNK, Vocabulary

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Stage2Config:
    epochs: int = 5
    batch_size: int = 8
    lr: float = 1e-5
    weight_decay: float = 0.01
    lambda_grounding: float = 0.0
    grounding_threshold: float = 0.5

    def __post_init__(self):
        if self.lambda_grounding < 0:
            raise SpannerError("lambda_grounding must be >= 0")
        if not 0.0 <= self.grounding_threshold <= 1.0:
            raise SpannerError("grounding_threshold must lie in [0, 1]")


@dataclass(frozen=True)
class TrainingCandidate:
    """A stage-2 training row: candidate, its gold class, gold regions."""

    candidate: SpanCandidate
    gold_type: str  # an entity type, or NON_ENTITY for harvested negatives
    grounding: GroundingAnnotation | None = None


@dataclass
class RecognitionOutput:
    candidate: SpanCandidate
    class_dist: ClassDistribution
    overlap_scores: tuple[float, ...]
    grounding_logits: Tensor | None = None  # graph handle during training


@dataclass(frozen=True)
class EntityPrediction:
    sentence_id: str
    span: Span  # carries the predicted (non-reserved) type
    region: BoundingBox | None = None

    def __post_init__(self):
        if self.span.entity_type in (None, NON_ENTITY):
            raise SpannerError("predictions must carry a real entity type")


def recognition_loss(output: RecognitionOutput, gold_type: int):
    """Cross-entropy of the class distribution at the gold index."""
    return cross_entropy(output.class_dist, gold_type)


def grounding_targets(
    candidate_gold: GroundingAnnotation, objects: Sequence[ObjectDetail]
) -> list[float]:
    """Per-object training target: best IoU against any gold box.

    All zeros for ungroundable entities. ``objects`` must be the prompt's
    included objects, in prompt order.
    """
    if not candidate_gold.groundable:
        return [0.0] * len(objects)
    return [
        max(iou(gold_box, detail.box) for gold_box in candidate_gold.boxes)
        for detail in objects
    ]


def grounding_loss(output: RecognitionOutput, targets: Sequence[float]):
    """Sum over objects of BCE(overlap score, target) for one candidate."""
    if len(targets) != len(output.overlap_scores):
        raise SpannerError(
            f"{len(targets)} targets for {len(output.overlap_scores)} overlap scores"
        )
    if not targets:
        return 0.0
    if output.grounding_logits is not None:
        return binary_cross_entropy(
            output.grounding_logits, np.asarray(targets)
        ).sum()
    return sum(binary_cross_entropy(p, t) for p, t in zip(output.overlap_scores, targets))


def combined_loss(cls, grd, lambda_grounding: float):
    """cls + lambda * grd; exactly cls when lambda is zero."""
    if lambda_grounding == 0.0:
        return cls
    return cls + lambda_grounding * grd


@dataclass
class Stage2Model:
    params: ParameterStore
    encoder: EncoderConfig
    vocab: Vocabulary
    class_names: list[str]  # entity types in dataset order, then NON_ENTITY

    def config_dict(self) -> dict:
        return {
            "kind": "stage2",
            "encoder": self.encoder.to_dict(),
            "vocab": self.vocab.to_list(),
            "class_names": self.class_names,
        }

    def save(self, path, seed: int):
        save_checkpoint(self.params, path, self.config_dict(), seed)

    @classmethod
    def load(cls, path) -> "Stage2Model":
        store, manifest = load_checkpoint(path)
        cfg = manifest["config"]
        if cfg.get("kind") != "stage2":
            raise SpannerError(f"{path}: not a stage-2 checkpoint")
        return cls(
            params=store,
            encoder=EncoderConfig.from_dict(cfg["encoder"]),
            vocab=Vocabulary.from_list(cfg["vocab"]),
            class_names=list(cfg["class_names"]),
        )

    def class_index(self, name: str) -> int:
        try:
            return self.class_names.index(name)
        except ValueError:
            raise SpannerError(f"unknown class {name!r}") from None

    def _heads(
        self,
        prompt: PromptSequence,
        train_mode: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, Tensor | None]:
        reps = forward_encoder(
            self.params, self.encoder, prompt.token_ids, train_mode=train_mode, rng=rng
        )
        mask_rep = reps[prompt.mask_position].reshape(1, -1)
        class_logits = apply_linear_head(self.params, "class_head", mask_rep).reshape(-1)
        grounding_logits = None
        if prompt.obj_positions:
            obj_reps = reps[np.asarray(prompt.obj_positions)]
            grounding_logits = apply_linear_head(
                self.params, "grounding_head", obj_reps
            ).reshape(-1)
        return class_logits, grounding_logits

    def recognize(
        self,
        prompt: PromptSequence,
        train_mode: bool = False,
        rng: np.random.Generator | None = None,
    ) -> RecognitionOutput:
        class_logits, grounding_logits = self._heads(prompt, train_mode, rng)
        scores: tuple[float, ...] = ()
        if grounding_logits is not None:
            scores = tuple(
                float(v)
                for v in 0.5 * (1.0 + np.tanh(0.5 * grounding_logits.data))
            )
        return RecognitionOutput(
            candidate=prompt.candidate_ref,
            class_dist=ClassDistribution.from_logits(class_logits),
            overlap_scores=scores,
            grounding_logits=grounding_logits,
        )


def _row_prompt(
    row_candidate: SpanCandidate,
    bundle: KnowledgeBundle,
    sentences: Mapping[str, TaggedSentence],
    vocab: Vocabulary,
    max_len: int,
) -> PromptSequence:
    sentence = sentences.get(row_candidate.sentence_id)
    if sentence is None:
        raise SpannerError(f"no sentence with id {row_candidate.sentence_id!r}")
    return build_prompt(row_candidate, sentence, bundle, vocab, max_len)


def train_stage2(
    rows: Sequence[TrainingCandidate],
    bundles: Sequence[KnowledgeBundle],
    sentences: Mapping[str, TaggedSentence],
    entity_types: Sequence[str],
    config: Stage2Config,
    seed: int,
    encoder_opts: dict | None = None,
    teacher: Stage2Model | None = None,
    distill_mode: DistillMode = DistillMode.OFF,
) -> Stage2Model:
    """Train classification and grounding heads over candidate prompts.

    Gold rows carry their type, harvested negatives carry NON_ENTITY. With a
    teacher, the blended distillation loss replaces only the classification
    term; the grounding term is untouched.
    """
    if not rows:
        raise SpannerError("no training candidates")
    if len(rows) != len(bundles):
        raise SpannerError("rows and bundles are misaligned")
    if config.lambda_grounding > 0:
        for row in rows:
            if row.grounding is None:
                raise SpannerError(
                    f"lambda > 0 but candidate {row.candidate.sentence_id}"
                    f"{row.candidate.span.key()} has no grounding targets"
                )

    opts = dict(DESK_ENCODER, **(encoder_opts or {}))
    max_len = opts["max_sequence_length"]
    streams = [
        prompt_tokens(row.candidate, sentences[row.candidate.sentence_id], bundle)
        for row, bundle in zip(rows, bundles)
    ]
    vocab = Vocabulary.build(streams, specials=(UNK, MASK, OBJ))
    encoder = EncoderConfig(vocab_size=len(vocab), **opts)

    class_names = list(entity_types) + [NON_ENTITY]
    class_index = {name: i for i, name in enumerate(class_names)}

    init_rng = np.random.default_rng(derive_seed(seed, "stage2-init"))
    store = init_encoder_params(encoder, init_rng)
    add_linear_head(store, "class_head", encoder.embed_dim, len(class_names), init_rng)
    add_linear_head(store, "grounding_head", encoder.embed_dim, 1, init_rng)
    model = Stage2Model(store, encoder, vocab, class_names)

    prompts = [
        _row_prompt(row.candidate, bundle, sentences, vocab, max_len)
        for row, bundle in zip(rows, bundles)
    ]
    golds = []
    for row in rows:
        if row.gold_type not in class_index:
            raise SpannerError(f"gold type {row.gold_type!r} not in the class set")
        golds.append(class_index[row.gold_type])
    targets = []
    for row, bundle, prompt in zip(rows, bundles, prompts):
        included = bundle.objects[: prompt.num_objects()]
        if config.lambda_grounding > 0:
            targets.append(grounding_targets(row.grounding, included))
        else:
            targets.append(None)

    order_rng = np.random.default_rng(derive_seed(seed, "stage2-order"))
    step = 0
    for epoch in range(config.epochs):
        order = order_rng.permutation(len(rows))
        epoch_loss = 0.0
        batches = 0
        for at in range(0, len(order), config.batch_size):
            take = order[at : at + config.batch_size]
            rng = np.random.default_rng(derive_seed(seed, f"drop-{step}"))
            cls_sum = None
            grd_sum = None
            for i in take:
                output = model.recognize(prompts[i], train_mode=True, rng=rng)
                if teacher is None or distill_mode is DistillMode.OFF:
                    part = recognition_loss(output, golds[i])
                else:
                    teacher_out = teacher.recognize(prompts_for_teacher(teacher, rows[i], bundles[i], sentences, max_len))
                    part = distill_loss(
                        output.class_dist, golds[i], teacher_out.class_dist, distill_mode
                    )
                cls_sum = part if cls_sum is None else cls_sum + part
                if config.lambda_grounding > 0 and targets[i]:
                    grd_part = grounding_loss(output, targets[i])
                    grd_sum = grd_part if grd_sum is None else grd_sum + grd_part
            scale = 1.0 / len(take)
            cls_loss = cls_sum * scale
            grd_loss = grd_sum * scale if grd_sum is not None else 0.0
            loss = combined_loss(cls_loss, grd_loss, config.lambda_grounding)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"stage 2 loss diverged at epoch {epoch}, step {step}"
                )
            grads = backward(loss, store.entries)
            optimizer_step(store, grads, config.lr, config.weight_decay)
            epoch_loss += value
            batches += 1
            step += 1
        log.info("stage2 epoch %d: mean batch loss %.6f", epoch, epoch_loss / batches)
    return model


def prompts_for_teacher(
    teacher: Stage2Model,
    row: TrainingCandidate,
    bundle: KnowledgeBundle,
    sentences: Mapping[str, TaggedSentence],
    max_len: int,
) -> PromptSequence:
    """The same prompt text mapped through the teacher's own vocabulary."""
    return _row_prompt(row.candidate, bundle, sentences, teacher.vocab, max_len)


def predict(
    model: Stage2Model,
    candidates: Sequence[SpanCandidate],
    bundles: Sequence[KnowledgeBundle],
    sentences: Mapping[str, TaggedSentence],
    config: Stage2Config,
) -> list[EntityPrediction]:
    """Classify candidates and pick regions.

    Non-entity argmax drops the candidate. The region is the box of the
    highest-scoring object when that score reaches the threshold, otherwise
    None; candidates with no objects are always None.
    """
    if len(candidates) != len(bundles):
        raise SpannerError("candidates and bundles are misaligned")
    predictions = []
    for candidate, bundle in zip(candidates, bundles):
        sentence = sentences.get(candidate.sentence_id)
        if sentence is None:
            raise SpannerError(f"no sentence with id {candidate.sentence_id!r}")
        prompt = build_prompt(
            candidate, sentence, bundle, model.vocab, model.encoder.max_sequence_length
        )
        output = model.recognize(prompt)
        predicted = model.class_names[output.class_dist.argmax()]
        if predicted == NON_ENTITY:
            continue
        region = None
        if output.overlap_scores:
            best = int(np.argmax(output.overlap_scores))
            if output.overlap_scores[best] >= config.grounding_threshold:
                included = bundle.objects[: prompt.num_objects()]
                region = included[best].box
        predictions.append(
            EntityPrediction(
                sentence_id=candidate.sentence_id,
                span=Span(
                    candidate.span.start,
                    candidate.span.end,
                    predicted,
                    candidate.span.surface,
                ),
                region=region,
            )
        )
    return predictions
