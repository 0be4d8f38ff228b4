"""Confidence-weighted self-distillation.

A teacher is trained with plain cross-entropy, then a student's per-sample
classification loss blends gold cross-entropy against teacher-matching KL
divergence: ``a * CE(gold, student) + (1 - a) * KL(teacher || student)``.
In adaptive mode ``a`` is the teacher's probability of the gold class, so
confidently-correct labels are trusted and suspect ones defer to the
teacher. Fixed blends (a = 0.5, a = 0) and a no-distillation mode cover the
ablation grid; a synthetic cluster-classification benchmark measures
robustness to injected label noise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .errors import SpannerError
from .nn import (
    ParameterStore,
    Tensor,
    add_linear_head,
    apply_linear_head,
    backward,
    log_softmax,
    optimizer_step,
)
from .nn.losses import ClassDistribution, cross_entropy, kl_divergence
from .util import derive_seed

log = logging.getLogger(__name__)


class DistillMode(str, Enum):
    OFF = "off"  # plain cross-entropy, no student
    ADAPTIVE = "adaptive"  # a = teacher probability of the gold class
    HALF = "half"  # a fixed at 0.5
    FULL = "full"  # a fixed at 0: pure teacher matching


def blend_weight(mode: DistillMode, teacher_gold_prob) -> float | np.ndarray:
    if mode is DistillMode.ADAPTIVE:
        return teacher_gold_prob
    if mode is DistillMode.HALF:
        return 0.5
    if mode is DistillMode.FULL:
        return 0.0
    raise SpannerError(f"no blend weight for mode {mode}")


def distill_loss(
    student_dist: ClassDistribution,
    gold: int,
    teacher_dist: ClassDistribution,
    mode: DistillMode,
):
    """Per-sample blended loss; the teacher is a constant (no gradient).

    Zero-weight terms are skipped outright, so a = 1 is exactly CE and a = 0
    exactly KL.
    """
    if mode is DistillMode.OFF:
        return cross_entropy(student_dist, gold)
    a = float(blend_weight(mode, teacher_dist.probs[gold]))
    if a == 1.0:
        return cross_entropy(student_dist, gold)
    if a == 0.0:
        return kl_divergence(teacher_dist, student_dist)
    ce = cross_entropy(student_dist, gold)
    kl = kl_divergence(teacher_dist, student_dist)
    return a * ce + (1.0 - a) * kl


def _np_log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def blended_class_loss(
    student_log_probs: Tensor,
    gold: np.ndarray,
    teacher_logits: np.ndarray,
    mode: DistillMode,
) -> Tensor:
    """Vectorized blended loss, one entry per sample.

    ``student_log_probs`` is the graph log-softmax [N, C]; the teacher
    logits are plain arrays and contribute no gradient.
    """
    n = len(gold)
    rows = np.arange(n)
    dtype = student_log_probs.data.dtype
    ce = -student_log_probs[(rows, gold)]
    if mode is DistillMode.OFF:
        return ce
    teacher_lsm = _np_log_softmax(np.asarray(teacher_logits, dtype=np.float64))
    teacher_probs = np.exp(teacher_lsm)
    entropy = (teacher_probs * teacher_lsm).sum(axis=-1)  # sum t log t
    kl = Tensor(entropy.astype(dtype)) - (
        Tensor(teacher_probs.astype(dtype)) * student_log_probs
    ).sum(axis=-1)
    if mode is DistillMode.FULL:
        return kl
    a = np.asarray(blend_weight(mode, teacher_probs[rows, gold]), dtype=dtype)
    a = np.broadcast_to(a, (n,))
    return Tensor(a) * ce + Tensor(1.0 - a) * kl


def distill(
    dataset,
    train_fn: Callable,
    config,
    mode: DistillMode,
    seed: int,
):
    """Teacher/student training round.

    ``train_fn(dataset, config, seed, teacher=None, distill_mode=...)`` must
    return a trained model; stage-1, stage-2, and the benchmark trainer all
    satisfy this. Mode OFF returns the teacher twice.
    """
    teacher = train_fn(dataset, config, derive_seed(seed, "teacher"))
    if mode is DistillMode.OFF:
        return teacher, teacher
    student = train_fn(
        dataset,
        config,
        derive_seed(seed, "student"),
        teacher=teacher,
        distill_mode=mode,
    )
    return teacher, student


# ---------------------------------------------------------------------------
# Synthetic label-noise benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterTaskSpec:
    """Separable multi-cluster classification in a small feature space."""

    num_classes: int = 4
    dim: int = 16
    train_size: int = 2000
    test_size: int = 1000
    center_scale: float = 4.0
    cluster_std: float = 1.2
    hidden_dim: int = 32
    epochs: int = 60
    batch_size: int = 64
    lr: float = 2e-3
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.num_classes < 2:
            raise SpannerError("benchmark task needs at least two classes")


def make_cluster_data(spec: ClusterTaskSpec, seed: int):
    """(x_train, y_train, x_test, y_test) with clean labels."""
    rng = np.random.default_rng(derive_seed(seed, "cluster-data"))
    centers = rng.normal(size=(spec.num_classes, spec.dim))
    centers *= spec.center_scale / np.linalg.norm(centers, axis=1, keepdims=True)

    def draw(count):
        labels = rng.integers(spec.num_classes, size=count)
        points = centers[labels] + spec.cluster_std * rng.normal(size=(count, spec.dim))
        return points.astype(np.float32), labels.astype(np.int64)

    x_train, y_train = draw(spec.train_size)
    x_test, y_test = draw(spec.test_size)
    return x_train, y_train, x_test, y_test


def inject_label_noise(labels: np.ndarray, rate: float, seed: int) -> np.ndarray:
    """Symmetric noise: each flipped label becomes a uniform other class."""
    if not 0.0 <= rate < 0.5:
        raise SpannerError(f"noise rate {rate} outside [0, 0.5)")
    rng = np.random.default_rng(derive_seed(seed, "label-noise"))
    noisy = labels.copy()
    flip = rng.random(len(labels)) < rate
    k = int(labels.max()) + 1
    for i in np.flatnonzero(flip):
        noisy[i] = (labels[i] + rng.integers(1, k)) % k
    return noisy


@dataclass
class MlpModel:
    params: ParameterStore
    spec: ClusterTaskSpec

    def logits(self, x: np.ndarray) -> np.ndarray:
        return _mlp_logits(self.params, x).data

    def accuracy(self, x: np.ndarray, y: np.ndarray) -> float:
        return float((self.logits(x).argmax(axis=-1) == y).mean())


def _mlp_logits(store: ParameterStore, x: np.ndarray) -> Tensor:
    hidden = (Tensor(x) @ store["mlp.hidden.w"] + store["mlp.hidden.b"]).gelu()
    return apply_linear_head(store, "mlp.out", hidden)


def train_mlp(
    data: tuple[np.ndarray, np.ndarray],
    spec: ClusterTaskSpec,
    seed: int,
    teacher: MlpModel | None = None,
    distill_mode: DistillMode = DistillMode.OFF,
) -> MlpModel:
    """Minibatch AdamW training of the benchmark classifier."""
    x, y = data
    rng = np.random.default_rng(derive_seed(seed, "mlp-init"))
    store = ParameterStore()
    bound = 1.0 / np.sqrt(spec.dim)
    store.add("mlp.hidden.w", rng.uniform(-bound, bound, (spec.dim, spec.hidden_dim)).astype(np.float32))
    store.add("mlp.hidden.b", np.zeros(spec.hidden_dim, dtype=np.float32))
    add_linear_head(store, "mlp.out", spec.hidden_dim, spec.num_classes, rng)

    order_rng = np.random.default_rng(derive_seed(seed, "mlp-order"))
    for _epoch in range(spec.epochs):
        order = order_rng.permutation(len(y))
        for at in range(0, len(order), spec.batch_size):
            take = order[at : at + spec.batch_size]
            batch_x, batch_y = x[take], y[take]
            logits = _mlp_logits(store, batch_x)
            lsm = log_softmax(logits, axis=-1)
            if teacher is None or distill_mode is DistillMode.OFF:
                loss = -lsm[(np.arange(len(take)), batch_y)].mean()
            else:
                loss = blended_class_loss(
                    lsm, batch_y, teacher.logits(batch_x), distill_mode
                ).mean()
            grads = backward(loss, store.entries)
            optimizer_step(store, grads, spec.lr, spec.weight_decay)
    return MlpModel(store, spec)


@dataclass(frozen=True)
class BenchRow:
    noise_rate: float
    mode: str
    seed: int
    test_accuracy: float


@dataclass
class NoiseBenchReport:
    rows: list[BenchRow]

    def summary(self) -> list[dict]:
        """Mean/stddev per (noise_rate, mode), in first-seen order."""
        grouped: dict[tuple[float, str], list[float]] = {}
        for row in self.rows:
            grouped.setdefault((row.noise_rate, row.mode), []).append(row.test_accuracy)
        out = []
        for (rate, mode), values in grouped.items():
            arr = np.asarray(values)
            out.append(
                {
                    "noise_rate": rate,
                    "mode": mode,
                    "mean_accuracy": float(arr.mean()),
                    "stddev": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
                    "runs": len(arr),
                }
            )
        return out

    def mean_accuracy(self, noise_rate: float, mode: str) -> float:
        values = [
            r.test_accuracy
            for r in self.rows
            if r.noise_rate == noise_rate and r.mode == mode
        ]
        if not values:
            raise SpannerError(f"no benchmark rows for rate={noise_rate} mode={mode}")
        return float(np.mean(values))


def noise_benchmark(
    spec: ClusterTaskSpec,
    noise_rates: list[float],
    modes: list[DistillMode],
    seeds: list[int],
) -> NoiseBenchReport:
    """Train every (rate, mode, seed) cell and report clean-test accuracy.

    Noise corrupts training labels only. Within one (rate, seed) cell all
    distillation modes share the teacher and the student initialization, so
    the comparison isolates the blending policy.
    """
    for rate in noise_rates:
        if not 0.0 <= rate < 0.5:
            raise SpannerError(f"noise rate {rate} outside [0, 0.5)")
    rows = []
    for rate in noise_rates:
        for seed in seeds:
            x_train, y_train, x_test, y_test = make_cluster_data(spec, seed)
            noisy = inject_label_noise(y_train, rate, seed)
            teacher = train_mlp((x_train, noisy), spec, derive_seed(seed, "teacher"))
            for mode in modes:
                if mode is DistillMode.OFF:
                    model = teacher
                else:
                    model = train_mlp(
                        (x_train, noisy),
                        spec,
                        derive_seed(seed, "student"),
                        teacher=teacher,
                        distill_mode=mode,
                    )
                accuracy = model.accuracy(x_test, y_test)
                rows.append(BenchRow(rate, mode.value, seed, accuracy))
                log.info(
                    "noise benchmark: rate=%.2f mode=%s seed=%d accuracy=%.4f",
                    rate, mode.value, seed, accuracy,
                )
    return NoiseBenchReport(rows)
