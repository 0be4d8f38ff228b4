"""Gradient-fidelity suite: reverse-mode vs central differences on a tiny
encoder with every head/loss combination the pipeline trains."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distill import DistillMode, blended_class_loss
from .nn import (
    EncoderConfig,
    ParameterStore,
    Tensor,
    add_linear_head,
    apply_linear_head,
    binary_cross_entropy,
    forward_encoder,
    init_encoder_params,
    log_softmax,
)
from .nn.gradcheck import GradCheckReport, gradient_check

TINY = EncoderConfig(
    vocab_size=12,
    embed_dim=8,
    num_layers=2,
    num_heads=2,
    ffn_dim=16,
    max_sequence_length=32,
    dropout_rate=0.0,
)

_TOKENS = np.array([3, 7, 1, 9, 4, 2, 11, 5])
_MASK_POS = 2
_OBJ_POS = np.array([4, 6])
_NUM_CLASSES = 5
_GOLD_TAGS = np.array([0, 2, 1, 0, 3, 4, 0, 1])
_GOLD_CLASS = 3
_BCE_TARGETS = np.array([0.3, 0.8])


def _tiny_store(seed: int, with_heads: list[str]) -> ParameterStore:
    rng = np.random.default_rng(seed)
    store = init_encoder_params(TINY, rng, dtype=np.float64)
    if "tag" in with_heads:
        add_linear_head(store, "tag_head", TINY.embed_dim, _NUM_CLASSES, rng, np.float64)
    if "class" in with_heads:
        add_linear_head(store, "class_head", TINY.embed_dim, _NUM_CLASSES, rng, np.float64)
    if "grounding" in with_heads:
        add_linear_head(store, "grounding_head", TINY.embed_dim, 1, rng, np.float64)
    return store


def _encode(store: ParameterStore) -> Tensor:
    return forward_encoder(store, TINY, _TOKENS, train_mode=False)


def _loss_bio_ce(store: ParameterStore) -> Tensor:
    logits = apply_linear_head(store, "tag_head", _encode(store))
    lsm = log_softmax(logits, axis=-1)
    return -lsm[(np.arange(len(_GOLD_TAGS)), _GOLD_TAGS)].mean()


def _loss_mask_ce(store: ParameterStore) -> Tensor:
    reps = _encode(store)
    logits = apply_linear_head(store, "class_head", reps[_MASK_POS].reshape(1, -1))
    return -log_softmax(logits.reshape(-1))[_GOLD_CLASS]


def _grounding_term(store: ParameterStore, reps: Tensor) -> Tensor:
    logits = apply_linear_head(store, "grounding_head", reps[_OBJ_POS]).reshape(-1)
    return binary_cross_entropy(logits, _BCE_TARGETS).sum()


def _loss_grounding_bce(store: ParameterStore) -> Tensor:
    return _grounding_term(store, _encode(store))


def _loss_combined(store: ParameterStore) -> Tensor:
    reps = _encode(store)
    logits = apply_linear_head(store, "class_head", reps[_MASK_POS].reshape(1, -1))
    ce = -log_softmax(logits.reshape(-1))[_GOLD_CLASS]
    return ce + 1.0 * _grounding_term(store, reps)


_TEACHER_LOGITS = np.array([[0.9, -0.2, 0.4, 1.3, -1.0]])


def _loss_blended(store: ParameterStore) -> Tensor:
    reps = _encode(store)
    logits = apply_linear_head(store, "class_head", reps[_MASK_POS].reshape(1, -1))
    lsm = log_softmax(logits, axis=-1)
    return blended_class_loss(
        lsm, np.array([_GOLD_CLASS]), _TEACHER_LOGITS, DistillMode.ADAPTIVE
    ).sum()


@dataclass(frozen=True)
class SuiteEntry:
    name: str
    report: GradCheckReport


def grad_check_suite(h: float = 1e-4, seed: int = 7) -> list[SuiteEntry]:
    cases = [
        ("bio-ce-head", ["tag"], _loss_bio_ce),
        ("mask-class-head", ["class"], _loss_mask_ce),
        ("grounding-bce-head", ["grounding"], _loss_grounding_bce),
        ("combined-lambda-1", ["class", "grounding"], _loss_combined),
        ("blended-adaptive", ["class"], _loss_blended),
    ]
    entries = []
    for name, heads, loss_fn in cases:
        store = _tiny_store(seed, heads)
        entries.append(SuiteEntry(name, gradient_check(store, loss_fn, h=h)))
    return entries
