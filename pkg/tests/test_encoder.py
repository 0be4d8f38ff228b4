"""Encoder forward pass: contracts, determinism, and an independent
re-implementation as the numeric oracle."""

import math

import numpy as np
import pytest

from spanner.errors import SpannerError
from spanner.nn import (
    EncoderConfig,
    forward_encoder,
    init_encoder_params,
    sinusoidal_positions,
)

TINY = dict(embed_dim=8, num_layers=2, num_heads=2, ffn_dim=16,
            max_sequence_length=32, dropout_rate=0.0)


def test_config_validation():
    with pytest.raises(SpannerError):
        EncoderConfig(vocab_size=10, embed_dim=10, num_heads=4)
    with pytest.raises(SpannerError):
        EncoderConfig(vocab_size=0)
    with pytest.raises(SpannerError):
        EncoderConfig(vocab_size=10, dropout_rate=1.0)
    EncoderConfig(vocab_size=10, num_layers=0)  # degenerate depth is allowed


def test_zero_layers_is_embedding_plus_positions():
    config = EncoderConfig(vocab_size=12, **dict(TINY, num_layers=0))
    store = init_encoder_params(config, np.random.default_rng(0))
    ids = [3, 1, 7]
    out = forward_encoder(store, config, ids)
    expected = store["embed.tokens"].data[ids] + sinusoidal_positions(3, 8)
    np.testing.assert_array_equal(out.data, expected)


def test_same_seed_same_output_bitwise():
    config = EncoderConfig(vocab_size=12, **dict(TINY, dropout_rate=0.2))
    store = init_encoder_params(config, np.random.default_rng(0))
    first = forward_encoder(store, config, [1, 2, 3], True, np.random.default_rng(9))
    second = forward_encoder(store, config, [1, 2, 3], True, np.random.default_rng(9))
    assert np.array_equal(first.data, second.data)
    third = forward_encoder(store, config, [1, 2, 3], True, np.random.default_rng(10))
    assert not np.array_equal(first.data, third.data)


def test_sequence_too_long_rejected():
    config = EncoderConfig(vocab_size=12, **dict(TINY, max_sequence_length=4))
    store = init_encoder_params(config, np.random.default_rng(0))
    with pytest.raises(SpannerError):
        forward_encoder(store, config, [1, 2, 3, 4, 5])


def test_out_of_vocabulary_id_rejected():
    config = EncoderConfig(vocab_size=4, **TINY)
    store = init_encoder_params(config, np.random.default_rng(0))
    with pytest.raises(SpannerError):
        forward_encoder(store, config, [1, 9])


def test_train_mode_dropout_requires_rng():
    config = EncoderConfig(vocab_size=4, **dict(TINY, dropout_rate=0.5))
    store = init_encoder_params(config, np.random.default_rng(0))
    with pytest.raises(SpannerError):
        forward_encoder(store, config, [1], train_mode=True)


# ---------------------------------------------------------------------------
# independent oracle: a from-scratch float64 forward pass sharing no code
# with the implementation under test
# ---------------------------------------------------------------------------


def _oracle_forward(weights: dict, ids, num_layers, num_heads):
    x = weights["embed.tokens"][ids].astype(np.float64)
    length, dim = x.shape
    positions = np.zeros((length, dim))
    for pos in range(length):
        for i in range(dim // 2):
            angle = pos / (10000.0 ** (2 * i / dim))
            positions[pos, 2 * i] = math.sin(angle)
            positions[pos, 2 * i + 1] = math.cos(angle)
    x = x + positions

    def norm(v, gamma, beta):
        mu = v.mean(axis=-1, keepdims=True)
        var = ((v - mu) ** 2).mean(axis=-1, keepdims=True)
        return (v - mu) / np.sqrt(var + 1e-5) * gamma + beta

    def soft(v):
        e = np.exp(v - v.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    def gelu(v):
        c = math.sqrt(2.0 / math.pi)
        return 0.5 * v * (1.0 + np.tanh(c * (v + 0.044715 * v ** 3)))

    head_dim = dim // num_heads
    for layer in range(num_layers):
        p = f"layer{layer}"
        normed = norm(x, weights[f"{p}.ln1.gamma"], weights[f"{p}.ln1.beta"])
        merged = np.zeros_like(x)
        q_all = normed @ weights[f"{p}.attn.wq"] + weights[f"{p}.attn.wq_bias"]
        k_all = normed @ weights[f"{p}.attn.wk"] + weights[f"{p}.attn.wk_bias"]
        v_all = normed @ weights[f"{p}.attn.wv"] + weights[f"{p}.attn.wv_bias"]
        for h in range(num_heads):
            sl = slice(h * head_dim, (h + 1) * head_dim)
            q, k, v = q_all[:, sl], k_all[:, sl], v_all[:, sl]
            scores = soft(q @ k.T / math.sqrt(head_dim))
            merged[:, sl] = scores @ v
        x = x + merged @ weights[f"{p}.attn.wo"] + weights[f"{p}.attn.wo_bias"]
        normed = norm(x, weights[f"{p}.ln2.gamma"], weights[f"{p}.ln2.beta"])
        hidden = gelu(normed @ weights[f"{p}.ffn.w1"] + weights[f"{p}.ffn.b1"])
        x = x + hidden @ weights[f"{p}.ffn.w2"] + weights[f"{p}.ffn.b2"]
    return norm(x, weights["final_ln.gamma"], weights["final_ln.beta"])


def test_forward_matches_independent_reimplementation():
    config = EncoderConfig(vocab_size=11, **TINY)
    store = init_encoder_params(config, np.random.default_rng(42), dtype=np.float64)
    ids = [4, 0, 9, 2, 7]
    ours = forward_encoder(store, config, ids).data
    weights = {name: t.data for name, t in store.entries.items()}
    oracle = _oracle_forward(weights, ids, config.num_layers, config.num_heads)
    np.testing.assert_allclose(ours, oracle, rtol=1e-10, atol=1e-12)


def test_init_is_deterministic_per_seed():
    config = EncoderConfig(vocab_size=11, **TINY)
    a = init_encoder_params(config, np.random.default_rng(5))
    b = init_encoder_params(config, np.random.default_rng(5))
    assert a.checksum() == b.checksum()
    c = init_encoder_params(config, np.random.default_rng(6))
    assert a.checksum() != c.checksum()
