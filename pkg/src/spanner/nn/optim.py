"""AdamW: adaptive moments with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from ..errors import TrainingDivergedError
from .params import ParameterStore

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


def optimizer_step(
    store: ParameterStore,
    grads: dict[str, np.ndarray],
    lr: float,
    weight_decay: float = 0.0,
) -> ParameterStore:
    """One decoupled-weight-decay adaptive-moment update, in place.

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
    with bias-corrected first/second moments. Increments the step counter.
    """
    store.step += 1
    t = store.step
    correction1 = 1.0 - BETA1 ** t
    correction2 = 1.0 - BETA2 ** t
    for name, tensor in store.entries.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(tensor.data)
        if not np.isfinite(grad).all():
            raise TrainingDivergedError(f"non-finite gradient for parameter {name!r}")
        state = store.optimizer_state.setdefault(
            name,
            {"m": np.zeros_like(tensor.data), "v": np.zeros_like(tensor.data)},
        )
        grad = grad.astype(tensor.data.dtype, copy=False)
        state["m"] = BETA1 * state["m"] + (1.0 - BETA1) * grad
        state["v"] = BETA2 * state["v"] + (1.0 - BETA2) * grad * grad
        m_hat = state["m"] / correction1
        v_hat = state["v"] / correction2
        update = m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        if weight_decay:
            update = update + weight_decay * tensor.data
        tensor.data = tensor.data - lr * update
    return store
