"""Span candidate detection: a per-token BIO tagger over encoder outputs.

Trains with token-level cross-entropy (optionally blended with a teacher,
optionally under adversarial weight perturbation), decodes candidates with
the repairing BIO decoder, and harvests non-entity negatives by k-fold
cross-prediction on the training set.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .data import BioTag, Dataset, Span, TaggedSentence, decode_bio
from .distill import DistillMode, blended_class_loss
from .errors import CorpusError, SpannerError, TrainingDivergedError
from .nn import (
    EncoderConfig,
    ParameterStore,
    Tensor,
    add_linear_head,
    apply_linear_head,
    backward,
    forward_encoder,
    init_encoder_params,
    log_softmax,
    optimizer_step,
)
from .nn.params import load_checkpoint, save_checkpoint
from .util import derive_seed
from .vocab import UNK, Vocabulary

log = logging.getLogger(__name__)

DESK_ENCODER = {
    "embed_dim": 64,
    "num_layers": 2,
    "num_heads": 4,
    "ffn_dim": 128,
    "max_sequence_length": 256,
    "dropout_rate": 0.1,
}


@dataclass(frozen=True)
class SpanCandidate:
    """A span stage 1 proposes for stage 2 to classify (type left unset)."""

    sentence_id: str
    span: Span
    source: str = "predicted"  # gold | predicted | fold_negative

    def __post_init__(self):
        if self.source not in ("gold", "predicted", "fold_negative"):
            raise SpannerError(f"bad candidate source {self.source!r}")


@dataclass(frozen=True)
class Stage1Config:
    epochs: int = 5
    batch_size: int = 8
    lr: float = 5e-6
    weight_decay: float = 1.0
    awp_enabled: bool = False
    awp_start_fraction: float = 0.5
    awp_rho: float = 0.01

    def __post_init__(self):
        if self.awp_enabled and not 0.0 < self.awp_start_fraction < 1.0:
            raise SpannerError("awp_start_fraction must lie in (0, 1) when AWP is on")


def tag_labels(entity_types: Sequence[str]) -> list[str]:
    labels = ["O"]
    for t in entity_types:
        labels.extend((f"B-{t}", f"I-{t}"))
    return labels


@dataclass
class Stage1Model:
    """Trained tagger plus everything needed to run it on new sentences."""

    params: ParameterStore
    encoder: EncoderConfig
    vocab: Vocabulary
    labels: list[str]
    entity_types: list[str]

    def config_dict(self) -> dict:
        return {
            "kind": "stage1",
            "encoder": self.encoder.to_dict(),
            "vocab": self.vocab.to_list(),
            "labels": self.labels,
            "entity_types": self.entity_types,
        }

    def save(self, path, seed: int):
        save_checkpoint(self.params, path, self.config_dict(), seed)

    @classmethod
    def load(cls, path) -> "Stage1Model":
        store, manifest = load_checkpoint(path)
        cfg = manifest["config"]
        if cfg.get("kind") != "stage1":
            raise SpannerError(f"{path}: not a stage-1 checkpoint")
        return cls(
            params=store,
            encoder=EncoderConfig.from_dict(cfg["encoder"]),
            vocab=Vocabulary.from_list(cfg["vocab"]),
            labels=list(cfg["labels"]),
            entity_types=list(cfg["entity_types"]),
        )

    def tag_logits(self, sentence: TaggedSentence) -> np.ndarray:
        ids = self.vocab.ids(sentence.tokens)
        reps = forward_encoder(self.params, self.encoder, ids, train_mode=False)
        return apply_linear_head(self.params, "tag_head", reps).data

    def predicted_tags(self, sentence: TaggedSentence) -> list[BioTag]:
        best = self.tag_logits(sentence).argmax(axis=-1)
        return [BioTag.parse(self.labels[i]) for i in best]


def _sentence_class_loss(
    model: Stage1Model,
    sentence: TaggedSentence,
    label_index: dict[str, int],
    rng: np.random.Generator,
    teacher: Stage1Model | None,
    mode: DistillMode,
) -> tuple[Tensor, int]:
    """Summed per-token loss for one sentence plus its token count."""
    ids = model.vocab.ids(sentence.tokens)
    reps = forward_encoder(model.params, model.encoder, ids, train_mode=True, rng=rng)
    logits = apply_linear_head(model.params, "tag_head", reps)
    gold = np.array([label_index[str(t)] for t in sentence.tags])
    student_lsm = log_softmax(logits, axis=-1)
    if teacher is None or mode is DistillMode.OFF:
        picked = student_lsm[(np.arange(len(gold)), gold)]
        return -picked.sum(), len(gold)
    teacher_logits = teacher.tag_logits(sentence).astype(np.float64)
    return (
        blended_class_loss(student_lsm, gold, teacher_logits, mode).sum(),
        len(gold),
    )


def _batch_loss_fn(
    model: Stage1Model,
    batch: Sequence[TaggedSentence],
    label_index: dict[str, int],
    seed: int,
    teacher: Stage1Model | None,
    mode: DistillMode,
) -> Callable[[ParameterStore], Tensor]:
    def loss_fn(_store: ParameterStore) -> Tensor:
        rng = np.random.default_rng(seed)
        total = None
        count = 0
        for sentence in batch:
            part, n = _sentence_class_loss(model, sentence, label_index, rng, teacher, mode)
            total = part if total is None else total + part
            count += n
        return total * (1.0 / count)

    return loss_fn


def awp_step(
    store: ParameterStore,
    loss_fn: Callable[[ParameterStore], Tensor],
    rho: float,
) -> dict[str, np.ndarray]:
    """Gradients at an adversarially perturbed weight point.

    Perturbs each tensor w by rho * (||w|| / ||g_w||) * g_w, re-evaluates the
    loss gradient there, restores w exactly, and returns the adversarial
    gradients. Falls back to the plain gradients if the perturbed loss is
    non-finite.
    """
    loss = loss_fn(store)
    grads = backward(loss, store.entries)
    if rho == 0.0:
        return grads
    saved = {name: t.data for name, t in store.entries.items()}
    for name, tensor in store.entries.items():
        g = grads[name]
        g_norm = float(np.linalg.norm(g))
        if g_norm == 0.0:
            continue
        w_norm = float(np.linalg.norm(tensor.data))
        tensor.data = tensor.data + (rho * w_norm / g_norm) * g.astype(tensor.data.dtype)
    adv_loss = loss_fn(store)
    if not np.isfinite(adv_loss.data):
        for name, tensor in store.entries.items():
            tensor.data = saved[name]
        log.warning("AWP: non-finite perturbed loss, using plain gradients")
        return grads
    adv_grads = backward(adv_loss, store.entries)
    for name, tensor in store.entries.items():
        tensor.data = saved[name]
    return adv_grads


def train_stage1(
    train: Dataset,
    config: Stage1Config,
    seed: int,
    encoder_opts: dict | None = None,
    teacher: Stage1Model | None = None,
    distill_mode: DistillMode = DistillMode.OFF,
) -> Stage1Model:
    """Train the BIO tagger; returns the final model.

    With a teacher, the per-token loss is the blended distillation loss in
    ``distill_mode``; otherwise plain cross-entropy, averaged over tokens.
    """
    if not train.sentences:
        raise SpannerError("training dataset is empty")
    opts = dict(DESK_ENCODER, **(encoder_opts or {}))
    vocab = Vocabulary.build([s.tokens for s in train.sentences], specials=(UNK,))
    labels = tag_labels(train.entity_types)
    label_index = {l: i for i, l in enumerate(labels)}
    encoder = EncoderConfig(vocab_size=len(vocab), **opts)

    init_rng = np.random.default_rng(derive_seed(seed, "stage1-init"))
    store = init_encoder_params(encoder, init_rng)
    add_linear_head(store, "tag_head", encoder.embed_dim, len(labels), init_rng)
    model = Stage1Model(store, encoder, vocab, labels, list(train.entity_types))

    order_rng = np.random.default_rng(derive_seed(seed, "stage1-order"))
    awp_from = math.ceil(config.awp_start_fraction * config.epochs) if config.awp_enabled else None

    step = 0
    for epoch in range(config.epochs):
        order = order_rng.permutation(len(train.sentences))
        epoch_loss = 0.0
        batches = 0
        for at in range(0, len(order), config.batch_size):
            batch = [train.sentences[i] for i in order[at : at + config.batch_size]]
            loss_fn = _batch_loss_fn(
                model, batch, label_index, derive_seed(seed, f"drop-{step}"), teacher,
                distill_mode,
            )
            if awp_from is not None and epoch >= awp_from:
                grads = awp_step(store, loss_fn, config.awp_rho)
                loss_value = float(loss_fn(store).data)
            else:
                loss = loss_fn(store)
                loss_value = float(loss.data)
                grads = backward(loss, store.entries)
            if not np.isfinite(loss_value):
                raise TrainingDivergedError(
                    f"stage 1 loss diverged at epoch {epoch}, step {step}"
                )
            optimizer_step(store, grads, config.lr, config.weight_decay)
            epoch_loss += loss_value
            batches += 1
            step += 1
        log.info("stage1 epoch %d: mean batch loss %.6f", epoch, epoch_loss / batches)
    return model


def detect_candidates(
    model: Stage1Model, sentences: Sequence[TaggedSentence]
) -> list[SpanCandidate]:
    """Argmax tags per token, repaired BIO decode, one candidate per span.

    Stage-1 type guesses are discarded; stage 2 re-classifies every span.
    """
    candidates = []
    for sentence in sentences:
        tags = model.predicted_tags(sentence)
        for span in decode_bio(tags, repair=True, tokens=sentence.tokens):
            candidates.append(
                SpanCandidate(
                    sentence_id=sentence.id,
                    span=Span(span.start, span.end, None, span.surface),
                    source="predicted",
                )
            )
    return candidates


def fold_assignment(n: int, folds: int, seed: int) -> np.ndarray:
    """fold_assignment[i] = held-out fold of sentence i; deterministic."""
    rng = np.random.default_rng(derive_seed(seed, "fold-partition"))
    assignment = np.empty(n, dtype=np.int64)
    for rank, index in enumerate(rng.permutation(n)):
        assignment[index] = rank % folds
    return assignment


def harvest_fold_negatives(
    train: Dataset,
    config: Stage1Config,
    folds: int = 4,
    seed: int = 0,
    encoder_opts: dict | None = None,
) -> list[SpanCandidate]:
    """Cross-predicted spans that match no gold span: stage-2 negatives.

    Trains one tagger per fold on the remaining folds, detects on the held
    out fold, and keeps every predicted (start, end) absent from that
    sentence's gold spans.
    """
    if folds < 2:
        raise SpannerError("need at least 2 folds")
    n = len(train.sentences)
    assignment = fold_assignment(n, folds, seed)
    for k in range(folds):
        if not (assignment == k).any():
            raise CorpusError(f"fold {k} is empty ({n} sentences for {folds} folds)")

    negatives: list[SpanCandidate] = []
    for k in range(folds):
        held_out = [s for s, f in zip(train.sentences, assignment) if f == k]
        rest = tuple(s for s, f in zip(train.sentences, assignment) if f != k)
        fold_model = train_stage1(
            replace(train, sentences=rest),
            config,
            derive_seed(seed, f"fold-model-{k}"),
            encoder_opts,
        )
        for candidate in detect_candidates(fold_model, held_out):
            sentence = next(s for s in held_out if s.id == candidate.sentence_id)
            gold_keys = {span.key() for span in sentence.gold_spans()}
            if candidate.span.key() not in gold_keys:
                negatives.append(replace(candidate, source="fold_negative"))
    return negatives


def gold_candidates(dataset: Dataset) -> list[SpanCandidate]:
    """Every gold span as a candidate (used for stage-2 training rows)."""
    out = []
    for sentence in dataset.sentences:
        for span in sentence.gold_spans():
            out.append(SpanCandidate(sentence.id, span, source="gold"))
    return out
