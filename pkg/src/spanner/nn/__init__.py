"""Dense-array math with reverse-mode differentiation, a small transformer
encoder, losses, AdamW, and checkpointable parameter stores."""

from .autodiff import Tensor, backward, dropout, log_softmax, softmax
from .encoder import (
    EncoderConfig,
    add_linear_head,
    apply_linear_head,
    forward_encoder,
    init_encoder_params,
    layer_norm,
    sinusoidal_positions,
)
from .gradcheck import GradCheckReport, gradient_check
from .losses import ClassDistribution, binary_cross_entropy, cross_entropy, kl_divergence
from .optim import optimizer_step
from .params import ParameterStore, load_checkpoint, save_checkpoint

__all__ = [
    "Tensor",
    "backward",
    "dropout",
    "log_softmax",
    "softmax",
    "EncoderConfig",
    "add_linear_head",
    "apply_linear_head",
    "forward_encoder",
    "init_encoder_params",
    "layer_norm",
    "sinusoidal_positions",
    "GradCheckReport",
    "gradient_check",
    "ClassDistribution",
    "binary_cross_entropy",
    "cross_entropy",
    "kl_divergence",
    "optimizer_step",
    "ParameterStore",
    "load_checkpoint",
    "save_checkpoint",
]
