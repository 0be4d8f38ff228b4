"""A small trainable transformer encoder.

Learned token embeddings + sinusoidal positions, pre-norm blocks with
multi-head self-attention and a GELU feed-forward, and a final layer norm
(skipped at depth zero, where the output is the raw embedding sum).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import SpannerError
from .autodiff import Tensor, dropout, softmax
from .params import ParameterStore

LN_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    embed_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 128
    max_sequence_length: int = 256
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise SpannerError("embed_dim must be divisible by num_heads")
        for name in ("vocab_size", "embed_dim", "num_layers", "num_heads", "ffn_dim",
                     "max_sequence_length"):
            if getattr(self, name) < (0 if name == "num_layers" else 1):
                raise SpannerError(f"{name} too small")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise SpannerError("dropout_rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "ffn_dim": self.ffn_dim,
            "max_sequence_length": self.max_sequence_length,
            "dropout_rate": self.dropout_rate,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "EncoderConfig":
        return cls(**raw)


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_encoder_params(
    config: EncoderConfig,
    rng: np.random.Generator,
    dtype=np.float32,
    store: ParameterStore | None = None,
) -> ParameterStore:
    """Fresh encoder parameters drawn from one seeded generator, in a fixed
    creation order so identical seeds give identical stores."""
    store = store if store is not None else ParameterStore()
    d = config.embed_dim
    store.add("embed.tokens", _uniform(rng, (config.vocab_size, d), d, dtype))
    for i in range(config.num_layers):
        p = f"layer{i}"
        for name in ("wq", "wk", "wv", "wo"):
            store.add(f"{p}.attn.{name}", _uniform(rng, (d, d), d, dtype))
            store.add(f"{p}.attn.{name}_bias", np.zeros(d, dtype=dtype))
        store.add(f"{p}.ln1.gamma", np.ones(d, dtype=dtype))
        store.add(f"{p}.ln1.beta", np.zeros(d, dtype=dtype))
        store.add(f"{p}.ffn.w1", _uniform(rng, (d, config.ffn_dim), d, dtype))
        store.add(f"{p}.ffn.b1", np.zeros(config.ffn_dim, dtype=dtype))
        store.add(f"{p}.ffn.w2", _uniform(rng, (config.ffn_dim, d), config.ffn_dim, dtype))
        store.add(f"{p}.ffn.b2", np.zeros(d, dtype=dtype))
        store.add(f"{p}.ln2.gamma", np.ones(d, dtype=dtype))
        store.add(f"{p}.ln2.beta", np.zeros(d, dtype=dtype))
    if config.num_layers > 0:
        store.add("final_ln.gamma", np.ones(d, dtype=dtype))
        store.add("final_ln.beta", np.zeros(d, dtype=dtype))
    return store


def add_linear_head(
    store: ParameterStore,
    name: str,
    in_dim: int,
    out_dim: int,
    rng: np.random.Generator,
    dtype=np.float32,
):
    store.add(f"{name}.w", _uniform(rng, (in_dim, out_dim), in_dim, dtype))
    store.add(f"{name}.b", np.zeros(out_dim, dtype=dtype))


def apply_linear_head(store: ParameterStore, name: str, x: Tensor) -> Tensor:
    return x @ store[f"{name}.w"] + store[f"{name}.b"]


def sinusoidal_positions(length: int, dim: int, dtype=np.float32) -> np.ndarray:
    positions = np.arange(length)[:, None].astype(np.float64)
    half = np.arange(dim // 2).astype(np.float64)
    rates = np.power(10000.0, -2.0 * half / dim)
    table = np.zeros((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates)
    return table.astype(dtype)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * (var + LN_EPS) ** -0.5 * gamma + beta


def _attention(store: ParameterStore, prefix: str, x: Tensor, num_heads: int) -> Tensor:
    length, dim = x.shape
    head_dim = dim // num_heads

    def project(name):
        h = x @ store[f"{prefix}.{name}"] + store[f"{prefix}.{name}_bias"]
        # [len, dim] -> [heads, len, head_dim]
        return h.reshape(length, num_heads, head_dim).transpose(1, 0, 2)

    q, k, v = project("wq"), project("wk"), project("wv")
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(head_dim))
    mixed = softmax(scores, axis=-1) @ v
    merged = mixed.transpose(1, 0, 2).reshape(length, dim)
    return merged @ store[f"{prefix}.wo"] + store[f"{prefix}.wo_bias"]


def forward_encoder(
    store: ParameterStore,
    config: EncoderConfig,
    token_ids,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Per-token representations, shape [len, embed_dim].

    Deterministic given parameters, inputs, and the dropout generator;
    dropout is active only in train mode.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise SpannerError("token_ids must be a non-empty 1-d sequence")
    if ids.size > config.max_sequence_length:
        raise SpannerError(
            f"sequence length {ids.size} exceeds maximum {config.max_sequence_length}"
        )
    if (ids < 0).any() or (ids >= config.vocab_size).any():
        raise SpannerError("token id out of vocabulary range")
    if train_mode and config.dropout_rate > 0.0 and rng is None:
        raise SpannerError("train-mode dropout needs an rng")

    dtype = store["embed.tokens"].data.dtype
    x = store["embed.tokens"][ids] + Tensor(
        sinusoidal_positions(ids.size, config.embed_dim, dtype)
    )
    rate = config.dropout_rate if train_mode else 0.0
    if rate:
        x = dropout(x, rate, rng)
    for i in range(config.num_layers):
        p = f"layer{i}"
        normed = layer_norm(x, store[f"{p}.ln1.gamma"], store[f"{p}.ln1.beta"])
        attended = _attention(store, f"{p}.attn", normed, config.num_heads)
        if rate:
            attended = dropout(attended, rate, rng)
        x = x + attended
        normed = layer_norm(x, store[f"{p}.ln2.gamma"], store[f"{p}.ln2.beta"])
        hidden = (normed @ store[f"{p}.ffn.w1"] + store[f"{p}.ffn.b1"]).gelu()
        hidden = hidden @ store[f"{p}.ffn.w2"] + store[f"{p}.ffn.b2"]
        if rate:
            hidden = dropout(hidden, rate, rng)
        x = x + hidden
    if config.num_layers > 0:
        x = layer_norm(x, store["final_ln.gamma"], store["final_ln.beta"])
    return x
