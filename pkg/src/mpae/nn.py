"""Functional neural building blocks on autodiff tensors.

Single-head attention throughout; blocks follow the pre-norm transformer
layout (LN → attention + residual → LN → MLP + residual).  Parameters are
plain dict entries name → Tensor; functions take the dict plus a prefix so
encoder, decoder, and descriptor extractor keep separate weights.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .errors import ValidationError

_GELU_C = math.sqrt(2.0 / math.pi)


def linear(x, w, b=None):
    out = ad.matmul(x, w)
    return out if b is None else out + b


def layer_norm(x, gamma, beta, eps=1e-5):
    mu = ad.tmean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = ad.tmean(centered * centered, axis=-1, keepdims=True)
    return centered / ad.sqrt(var + eps) * gamma + beta


def gelu(x):
    inner = _GELU_C * (x + 0.044715 * x * x * x)
    return 0.5 * x * (1.0 + ad.tanh(inner))


def attend(q, k, v, uniform=False):
    """softmax(q kᵀ / sqrt(C)) v over the token axis; 3-D (B, N, C) operands.

    ``uniform`` replaces the attention weights with the constant 1/N
    mixture (test hook; drops the gradient path through the scores).
    """
    dim = q.data.shape[-1]
    if uniform:
        b, nq = q.data.shape[0], q.data.shape[1]
        nk = k.data.shape[1]
        weights = ad.Tensor(np.full((b, nq, nk), 1.0 / nk))
    else:
        scores = ad.matmul(q, ad.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(dim))
        weights = ad.softmax(scores, axis=-1)
    return ad.matmul(weights, v)


def transformer_block(x, params, prefix):
    """Pre-norm self-attention block; x is (B, N, C)."""
    p = lambda name: params[f"{prefix}_{name}"]
    h = layer_norm(x, p("ln1_g"), p("ln1_b"))
    q = linear(h, p("wq"), p("bq"))
    k = linear(h, p("wk"), p("bk"))
    v = linear(h, p("wv"), p("bv"))
    x = x + linear(attend(q, k, v), p("wo"), p("bo"))
    h = layer_norm(x, p("ln2_g"), p("ln2_b"))
    h = linear(gelu(linear(h, p("mlp_w1"), p("mlp_b1"))), p("mlp_w2"), p("mlp_b2"))
    return x + h


def cross_attention_layer(queries, tokens, wq, wk, wv, value_tokens=None,
                          uniform=False):
    """One pure cross-attention layer: queries attend over tokens.

    No residual, no MLP: with uniform weights the output row is exactly the
    mean value-projected token, which is the documented reduction.
    ``value_tokens`` lets keys and values read different token streams
    (e.g. keys with position encodings, values without); defaults to
    ``tokens`` for both.
    """
    if value_tokens is None:
        value_tokens = tokens
    return attend(ad.matmul(queries, wq), ad.matmul(tokens, wk),
                  ad.matmul(value_tokens, wv), uniform=uniform)


def posenc_2d(grid_dims, dim):
    """Fixed 2-D sinusoidal position encodings, flattened to (gh*gw, dim).

    First half of the channels encodes the row index, second half the
    column index, each as interleaved sin/cos at geometric frequencies.
    """
    if dim % 4:
        raise ValidationError(f"position encoding needs C divisible by 4, got {dim}")
    gh, gw = grid_dims
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(0, half, 2, dtype=np.float64) / half)

    def encode(index):
        angles = index[:, None] * freqs[None, :]
        out = np.empty((index.size, half), dtype=np.float64)
        out[:, 0::2] = np.sin(angles)
        out[:, 1::2] = np.cos(angles)
        return out

    rows = np.repeat(np.arange(gh, dtype=np.float64), gw)
    cols = np.tile(np.arange(gw, dtype=np.float64), gh)
    return np.concatenate([encode(rows), encode(cols)], axis=1)
