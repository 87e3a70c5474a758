"""Trainable model pieces: feature projection, descriptor extractor, masked
encoder, and decoder.

Parameters live in a flat dict name → Tensor, created in one fixed order
from the (seed, "init") stream; the order is part of the determinism
contract, so parameter additions must go at the end.  The frozen filter
bank has no entries here, which is what makes it frozen.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .errors import ValidationError
from .filters import C_RAW
from .nn import cross_attention_layer, linear, posenc_2d, transformer_block
from .rng import SeedStream

DESCRIPTOR_LAYERS = 2

_BLOCK_PARAMS = (
    ("ln1_g", "ones", None), ("ln1_b", "zeros", None),
    ("wq", "weight", "square"), ("bq", "zeros", None),
    ("wk", "weight", "square"), ("bk", "zeros", None),
    ("wv", "weight", "square"), ("bv", "zeros", None),
    ("wo", "weight", "square"), ("bo", "zeros", None),
    ("ln2_g", "ones", None), ("ln2_b", "zeros", None),
    ("mlp_w1", "weight", "up"), ("mlp_b1", "zeros", "up_b"),
    ("mlp_w2", "weight", "down"), ("mlp_b2", "zeros", None),
)


def init_params(cfg):
    """All trainable parameters, drawn in fixed order from the init stream."""
    stream = SeedStream(cfg.seed, "init")
    c = cfg.C
    params = {}

    def weight(name, shape, scale=0.02):
        params[name] = ad.Tensor(stream.normal(shape) * scale, requires_grad=True)

    def zeros(name, shape):
        params[name] = ad.Tensor(np.zeros(shape), requires_grad=True)

    def ones(name, shape):
        params[name] = ad.Tensor(np.ones(shape), requires_grad=True)

    def block(prefix):
        shapes = {"square": (c, c), "up": (c, 4 * c), "down": (4 * c, c),
                  None: (c,), "up_b": (4 * c,)}
        for suffix, kind, shape_key in _BLOCK_PARAMS:
            maker = {"weight": weight, "zeros": zeros, "ones": ones}[kind]
            maker(f"{prefix}_{suffix}", shapes[shape_key])

    # The descriptor path has no residuals or layer norms, so its init must
    # produce selective attention on its own; with a flat small scale every
    # query averages the same tokens, all descriptor rows come out equal,
    # and the similarity map is pinned at 1/(K+1), which stalls training.
    # Query/key scales are deliberately hot (~30% top attention weight at
    # init); the value path stays at unit variance.
    weight("proj_w", (C_RAW, c), scale=0.3)
    zeros("proj_b", (c,))
    weight("desc_embed_w", (C_RAW, c), scale=1.0 / math.sqrt(C_RAW))
    zeros("desc_embed_b", (c,))
    weight("desc_queries", (cfg.K + 1, c), scale=1.0)
    for layer in range(DESCRIPTOR_LAYERS):
        # wk tied to wq: attention scores become (x·wq)·(t·wq), a Gram form
        # that concentrates toward x·t, so a query written in token
        # coordinates attends to tokens that resemble it.  Independent
        # draws would rank tokens along an arbitrary direction instead.
        # The second hop scores centered appearance, whose spread is far
        # smaller than the positional codes the first hop reads, so it
        # needs a hotter scale to stay selective.
        weight(f"desc_l{layer}_wq", (c, c),
               scale=(3.0 if layer == 0 else 6.0) / math.sqrt(c))
        params[f"desc_l{layer}_wk"] = ad.Tensor(
            params[f"desc_l{layer}_wq"].data.copy(), requires_grad=True)
        weight(f"desc_l{layer}_wv", (c, c), scale=1.0 / math.sqrt(c))
    # First-hop values pass through unchanged: the hop-one output is then a
    # plain average of centered tokens, still in token coordinates, and the
    # second hop's Gram score against those same coordinates reads as "cells
    # that look like what hop one found".  A random wv here would rotate the
    # query out of the key space and reduce hop two to noise.
    params["desc_l0_wv"] = ad.Tensor(np.eye(c), requires_grad=True)
    weight("enc_embed_w", (cfg.patch_dim, c), scale=1.0 / math.sqrt(cfg.patch_dim))
    zeros("enc_embed_b", (c,))
    for layer in range(cfg.encoder_layers):
        block(f"enc_l{layer}")
    for layer in range(cfg.decoder_layers):
        block(f"dec_l{layer}")
    weight("head_w", (c, cfg.patch_dim))
    zeros("head_b", (cfg.patch_dim,))
    # Tie a family of maps to the descriptor value space M = embed·wv at
    # init (all stay trainable; the tie fixes starting points only).
    #
    # * proj_w := M makes the similarity d·F a Gram form in one shared
    #   space, so it tracks raw-feature similarity from step one.  Two
    #   independent random projections instead give a near-rank-one map
    #   where a single channel outranks the rest at every cell.
    # * head_w := 4·pinv(M)·tile reads the mean color back out of a filled
    #   token and paints it across the patch (the 4/−2 pair linearizes the
    #   output sigmoid around mid-gray).  A cell claimed by the wrong
    #   descriptor then costs restoration error at step one, instead of
    #   only after the decoder has learned to read fills, which is too
    #   late: the sharpening pressure settles territory in the first
    #   hundred steps or so.
    # * enc_embed_w := pool·M writes a visible patch's mean color into the
    #   same slice of M-space, so visible and filled tokens read back
    #   consistently.
    m = params["desc_embed_w"].data @ params[f"desc_l{DESCRIPTOR_LAYERS - 1}_wv"].data
    params["proj_w"] = ad.Tensor(m, requires_grad=True)
    rgb_tile = np.zeros((C_RAW, cfg.patch_dim))
    pool = np.zeros((cfg.patch_dim, C_RAW))
    for ch in range(3):
        rgb_tile[ch, ch::3] = 1.0
        pool[ch::3, ch] = 1.0 / (cfg.patch_size ** 2)
    params["head_w"] = ad.Tensor(4.0 * np.linalg.pinv(m) @ rgb_tile, requires_grad=True)
    params["head_b"] = ad.Tensor(np.full(cfg.patch_dim, -2.0), requires_grad=True)
    params["enc_embed_w"] = ad.Tensor(pool @ m, requires_grad=True)
    # Position-seeded queries (trainable; seed only).  With wk tied to wq
    # the first layer attends by posenc match, so each foreground query
    # starts on its own interior cell and the background query on the
    # border: spatial territory is split before any appearance is learned,
    # and the background channel is the one anchored where background
    # actually lives.  Nothing at init can target appearance (there is no
    # data yet); position is the one usable coordinate.
    gh, gw = cfg.grid_size
    pos = posenc_2d((gh, gw), c)
    cy, cx = (gh - 1) / 2.0, (gw - 1) / 2.0
    radius = max(1.0, min(gh, gw) / 4.0)
    seeds = np.empty((cfg.K + 1, c))
    for k in range(cfg.K):
        angle = 2.0 * math.pi * k / cfg.K
        row = min(gh - 1, max(0, int(round(cy + radius * math.sin(angle)))))
        col = min(gw - 1, max(0, int(round(cx + radius * math.cos(angle)))))
        seeds[k] = pos[row * gw + col]
    edge = np.zeros((gh, gw), dtype=bool)
    edge[0, :] = edge[-1, :] = True
    edge[:, 0] = edge[:, -1] = True
    border_mean = pos[edge.reshape(-1)].mean(axis=0)
    norm = np.linalg.norm(border_mean)
    if norm > 1e-12:
        border_mean = border_mean * (math.sqrt(c / 2.0) / norm)
    seeds[cfg.K] = border_mean
    params["desc_queries"] = ad.Tensor(2.0 * seeds, requires_grad=True)
    return params


def frozen_param(name):
    """True for parameters the optimizer must never update.

    The descriptor path mirrors a frozen backbone with learnable queries:
    its token embedding and attention weights stay at their random init and
    only ``desc_queries`` trains.  Descriptors are then always attention
    mixtures of the current image's tokens, which keeps any single
    descriptor from drifting off to dominate every cell.  Gradients are
    still computed through these weights; they are dropped at update time.
    """
    return name.startswith("desc_l") or name.startswith("desc_embed")


def project_features(raw, w, b):
    """Trainable 1×1 projection of frozen raw features: F = raw·W + b.

    raw is a constant (..., C_raw) array; gradients reach W and b only.
    """
    raw_shape = raw.shape if not isinstance(raw, ad.Tensor) else raw.data.shape
    w_shape = w.data.shape if isinstance(w, ad.Tensor) else w.shape
    if raw_shape[-1] != w_shape[0]:
        raise ValidationError(
            f"raw feature dim {raw_shape[-1]} does not match projection rows {w_shape[0]}")
    if not isinstance(raw, ad.Tensor):
        raw = ad.Tensor(raw)
    return linear(raw, w, b)


def _grid_posenc(grid_dims, c):
    return posenc_2d(grid_dims, c)


def extract_descriptors(params, backbone_tokens, grid_dims, uniform_attention=False):
    """Part descriptors: K+1 queries attend over the backbone's image tokens.

    backbone_tokens: (B, N, C_raw) frozen-backbone features of the full
    (uncorrupted) image, N = gh*gw in row-major cell order.  Feeding the
    queries the same features that the dense map F is projected from is
    what couples descriptors to the similarity map from the start.
    Returns (B, K+1, C): K foreground descriptor rows, then background.
    """
    shape = backbone_tokens.shape if not isinstance(backbone_tokens, ad.Tensor) else backbone_tokens.data.shape
    if len(shape) != 3 or shape[1] == 0:
        raise ValidationError(f"expected nonempty (B, N, C_raw) tokens, got shape {tuple(shape)}")
    if shape[1] != grid_dims[0] * grid_dims[1]:
        raise ValidationError(f"token count {shape[1]} does not cover grid {grid_dims}")
    if not isinstance(backbone_tokens, ad.Tensor):
        backbone_tokens = ad.Tensor(backbone_tokens)
    c = params["desc_embed_w"].data.shape[1]
    appearance = linear(backbone_tokens, params["desc_embed_w"], params["desc_embed_b"])
    # Raw image features are all positive, so embedded tokens share a
    # dominant common direction; left in, every attention mixture collapses
    # toward it and all K+1 descriptors come out nearly identical.  Scoring
    # and intermediate mixing therefore use per-image centered tokens,
    # keeping only between-cell variation.  The last layer's values stay
    # uncentered: attention rows sum to one, so the common component rides
    # identically on every descriptor (the similarity softmax cancels it)
    # while the descriptors keep honest feature-space coordinates for the
    # fill and the decoder's color readout.
    centered = appearance - ad.tmean(appearance, axis=1, keepdims=True)
    # Layer 0 keys carry position, so the trainable queries address regions;
    # layer 1 keys are appearance only, so the second hop gathers cells that
    # look like what the first hop found.  Position noise in the second
    # hop's scores would otherwise drown the appearance signal.
    keyed_first = centered + ad.Tensor(_grid_posenc(grid_dims, c))
    k1 = params["desc_queries"].data.shape[0]
    e = ad.reshape(params["desc_queries"], (1, k1, c))
    for layer in range(DESCRIPTOR_LAYERS):
        last = layer == DESCRIPTOR_LAYERS - 1
        e = cross_attention_layer(
            e, keyed_first if layer == 0 else centered,
            params[f"desc_l{layer}_wq"], params[f"desc_l{layer}_wk"],
            params[f"desc_l{layer}_wv"],
            value_tokens=appearance if last else centered,
            uniform=uniform_attention)
    return e


def encode_unmasked(params, patch_vectors, position_indices, grid_dims, n_layers):
    """Encoder over visible patches only.

    patch_vectors: (B, M, 3p²); position_indices: (B, M) flat row-major cell
    ids, which select the position encodings so outputs depend on grid
    position, not list order.
    """
    shape = patch_vectors.shape if not isinstance(patch_vectors, ad.Tensor) else patch_vectors.data.shape
    if len(shape) != 3:
        raise ValidationError(f"expected (B, M, patch_dim) patches, got shape {tuple(shape)}")
    if shape[1] == 0:
        raise ValidationError("no unmasked patches to encode; training requires r < 1")
    if not isinstance(patch_vectors, ad.Tensor):
        patch_vectors = ad.Tensor(patch_vectors)
    c = params["enc_embed_w"].data.shape[1]
    pos_table = _grid_posenc(grid_dims, c)
    pos = pos_table[np.asarray(position_indices)]
    x = linear(patch_vectors, params["enc_embed_w"], params["enc_embed_b"]) + ad.Tensor(pos)
    for layer in range(n_layers):
        x = transformer_block(x, params, f"enc_l{layer}")
    return x


def decode(params, filled, cfg):
    """Decoder from the filled feature grid back to a [0,1] image.

    filled: (B, gh, gw, C) tensor; returns (B, gh*p, gw*p, 3).
    """
    from .masking import unpatchify

    b, gh, gw, c = filled.data.shape
    if (gh, gw) != cfg.grid_size or c != cfg.C:
        raise ValidationError(
            f"filled map shape {(gh, gw, c)} does not match config grid {cfg.grid_size} × C={cfg.C}")
    tokens = ad.reshape(filled, (b, gh * gw, c))
    if cfg.decoder_pos_enc:
        tokens = tokens + ad.Tensor(_grid_posenc((gh, gw), c))
    for layer in range(cfg.decoder_layers):
        tokens = transformer_block(tokens, params, f"dec_l{layer}")
    patches = ad.sigmoid(linear(tokens, params["head_w"], params["head_b"]))
    patches = ad.reshape(patches, (b, gh, gw, cfg.patch_dim))
    return unpatchify(patches, cfg.patch_size)
