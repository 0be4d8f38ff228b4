"""Classification and grounding losses.

Each loss comes in two flavours: a graph version that differentiates through
the producing logits, and a plain evaluation on already-normalized
probabilities. :class:`ClassDistribution` bridges the two by carrying its
logits tensor when a model produced it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import SpannerError
from .autodiff import Tensor, log_softmax

_EPS = 1e-12


@dataclass
class ClassDistribution:
    """A normalized distribution over classes, optionally wired to the graph."""

    probs: np.ndarray
    logits: Tensor | None = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 1:
            raise SpannerError("class distribution must be one-dimensional")
        if (self.probs < 0).any() or abs(self.probs.sum() - 1.0) > 1e-6:
            raise SpannerError("class distribution entries must be >= 0 and sum to 1")

    @classmethod
    def from_logits(cls, logits: Tensor) -> "ClassDistribution":
        flat = logits.data.reshape(-1).astype(np.float64)
        shifted = np.exp(flat - flat.max())
        return cls(probs=shifted / shifted.sum(), logits=logits)

    def argmax(self) -> int:
        return int(self.probs.argmax())


def _log_probs(dist: ClassDistribution) -> np.ndarray:
    # treat stored probs as exp-logits so zero entries stay finite
    logits = np.log(np.clip(dist.probs, _EPS, None))
    return logits - _logsumexp(logits)


def _logsumexp(x: np.ndarray) -> float:
    m = x.max()
    return m + np.log(np.exp(x - m).sum())


def cross_entropy(pred: ClassDistribution, gold: int) -> Tensor | float:
    """Negative log-likelihood of the gold class.

    Differentiates through ``pred.logits`` when present; otherwise evaluates
    on the stored probabilities with a log-sum-exp clamp, so a zero gold
    probability never yields an infinite loss.
    """
    if not 0 <= gold < len(pred.probs):
        raise SpannerError(f"gold index {gold} out of range for {len(pred.probs)} classes")
    if pred.logits is not None:
        flat = pred.logits.reshape(-1)
        return -log_softmax(flat)[gold]
    return float(-_log_probs(pred)[gold])


def binary_cross_entropy(pred, target):
    """BCE of a probability against a target in [0, 1], in the stable logit
    form max(z,0) - t*z + log(1 + exp(-|z|)).

    ``pred`` may be a raw-logit Tensor (graph mode; the score is its sigmoid,
    and target may be an aligned array) or a plain probability in (0, 1).
    """
    if np.any(np.asarray(target) < 0.0) or np.any(np.asarray(target) > 1.0):
        raise SpannerError(f"BCE target {target} outside [0, 1]")
    if isinstance(pred, Tensor):
        z = pred
        target = np.asarray(target, dtype=z.data.dtype)
        value = np.maximum(z.data, 0.0) - target * z.data + np.log1p(np.exp(-np.abs(z.data)))
        out = Tensor(value, (z,))
        sigma = 0.5 * (1.0 + np.tanh(0.5 * z.data))
        out._backward_fn = lambda g: z._accumulate(g * (sigma - target))
        return out
    p = float(np.clip(pred, _EPS, 1.0 - _EPS))
    z = np.log(p) - np.log1p(-p)
    return float(max(z, 0.0) - target * z + np.log1p(np.exp(-abs(z))))


def kl_divergence(target: ClassDistribution, pred: ClassDistribution) -> Tensor | float:
    """KL(target || pred) with 0*log(0) = 0; gradient flows only into pred."""
    if len(target.probs) != len(pred.probs):
        raise SpannerError("distribution sizes differ")
    t = target.probs
    support = t > 0.0
    if pred.logits is not None:
        log_p = log_softmax(pred.logits.reshape(-1))
        t_const = Tensor(t.astype(pred.logits.data.dtype))
        entropy = float((t[support] * np.log(t[support])).sum())
        return Tensor(np.asarray(entropy, dtype=pred.logits.data.dtype)) - (t_const * log_p).sum()
    p = np.clip(pred.probs, _EPS, None)
    return float((t[support] * (np.log(t[support]) - np.log(p[support]))).sum())
