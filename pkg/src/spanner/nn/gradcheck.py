"""Central-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import SpannerError
from .autodiff import Tensor, backward
from .params import ParameterStore


@dataclass
class GradCheckReport:
    max_relative_error: float
    worst_parameter: str
    entries_checked: int

    def ok(self, tol: float) -> bool:
        return self.max_relative_error < tol


def gradient_check(
    store: ParameterStore,
    loss_fn: Callable[[ParameterStore], Tensor],
    h: float = 1e-4,
    denominator_floor: float = 1e-3,
) -> GradCheckReport:
    """Compare backward() against central differences entry by entry.

    ``loss_fn`` must rebuild the forward graph from the store on every call.
    Requires a 64-bit store; relative error uses a magnitude floor so
    near-zero gradient entries are compared absolutely.
    """
    for name, tensor in store.entries.items():
        if tensor.data.dtype != np.float64:
            raise SpannerError(f"gradient_check needs float64 parameters ({name})")

    analytic = backward(loss_fn(store), store.entries)

    worst = 0.0
    worst_name = ""
    checked = 0
    for name, tensor in store.entries.items():
        flat = tensor.data.reshape(-1)
        grad_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            up = float(loss_fn(store).data)
            flat[i] = original - h
            down = float(loss_fn(store).data)
            flat[i] = original
            numeric = (up - down) / (2.0 * h)
            a = float(grad_flat[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), denominator_floor)
            checked += 1
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
    return GradCheckReport(worst, worst_name, checked)
