"""Forward pass: tokenizer, positions, encoder blocks, pooling, head.

One code path serves all three variants. ``tokenizer`` picks the
convolutional stack (CCT) or flat patches (ViT-Lite/CVT); ``pooling``
picks SeqPool (CCT/CVT) or a learnable class token (ViT-Lite).
"""

from __future__ import annotations

import functools
import math

import numpy as np

from ..errors import ParameterError, ShapeError
from ..numerics import (
    RngStream, Tensor, add, broadcast_to, concat, conv2d, dropout, gelu, layer_norm,
    linear, matmul, maxpool2d, relu, reshape, softmax, swap_last, transpose,
)
from ..numerics.ops import getitem, mul
from .config import CctConfig, plan_tokenizer
from .params import check_params


def _as_images(images, config: CctConfig, dtype) -> Tensor:
    if not isinstance(images, Tensor):
        images = Tensor(np.asarray(images), dtype=dtype)
    expected = (config.in_channels, *config.image_size)
    if images.ndim != 4 or tuple(images.shape[1:]) != expected:
        raise ShapeError(f"images must have shape (N, {expected[0]}, {expected[1]}, {expected[2]}), "
                         f"got {images.shape}")
    return images


def tokenize(images: Tensor, params: dict, config: CctConfig) -> Tensor:
    """conv -> relu -> maxpool per stage, then flatten space into tokens (N, n, d)."""
    x = images
    for i in range(config.tokenizer_stages):
        x = conv2d(x, params[f"tokenizer.stage{i}.kernel"], params[f"tokenizer.stage{i}.bias"],
                   stride=config.conv_stride, padding=config.conv_padding)
        x = relu(x)
        x = maxpool2d(x, config.pool_kernel, config.pool_stride, config.pool_padding)
    n, c, h, w = x.shape
    return transpose(reshape(x, (n, c, h * w)), (0, 2, 1))


def patch_embed(images: Tensor, params: dict, config: CctConfig) -> Tensor:
    """Non-overlapping patches flattened as (channel, row, col) and projected to d."""
    n, c, h, w = images.shape
    p = config.patch_size
    if h % p or w % p:
        raise ParameterError(f"image {h}x{w} is not divisible by patch_size {p}")
    gh, gw = h // p, w // p
    x = reshape(images, (n, c, gh, p, gw, p))
    x = transpose(x, (0, 2, 4, 1, 3, 5))
    x = reshape(x, (n, gh * gw, c * p * p))
    return linear(x, params["tokenizer.patch.weight"], params["tokenizer.patch.bias"])


def sinusoidal_positions(n: int, d: int, dtype=np.float64) -> np.ndarray:
    """Rows of sin/cos pairs: column 2i holds sin(pos / 10000^(2i/d)), 2i+1 the cos."""
    return _sinusoid_table(n, d, np.dtype(dtype).str)


@functools.lru_cache(maxsize=32)
def _sinusoid_table(n: int, d: int, dtype: str) -> np.ndarray:
    if d % 2:
        raise ParameterError(f"sinusoidal positions need an even dimension, got {d}")
    pos = np.arange(n, dtype=np.float64)[:, None]
    freq = np.power(10000.0, -np.arange(0, d, 2, dtype=np.float64) / d)
    table = np.empty((n, d), dtype=np.float64)
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    table = table.astype(dtype)
    table.setflags(write=False)
    return table


def mhsa(tokens: Tensor, params: dict, prefix: str, config: CctConfig,
         rng: RngStream | None = None, training: bool = False, return_attention: bool = False):
    """Multi-head scaled dot-product self-attention with an output projection."""
    n, seq, d = tokens.shape
    h = config.num_heads
    dh = d // h
    qkv = linear(tokens, params[f"{prefix}.qkv.weight"], params[f"{prefix}.qkv.bias"])
    qkv = transpose(reshape(qkv, (n, seq, 3, h, dh)), (2, 0, 3, 1, 4))
    q, k, v = getitem(qkv, 0), getitem(qkv, 1), getitem(qkv, 2)
    scores = mul(matmul(q, swap_last(k)), 1.0 / math.sqrt(dh))
    attn = softmax(scores, axis=-1)
    weights = attn
    attn = dropout(attn, config.attention_dropout_rate, rng, training)
    out = matmul(attn, v)
    out = reshape(transpose(out, (0, 2, 1, 3)), (n, seq, d))
    out = linear(out, params[f"{prefix}.proj.weight"], params[f"{prefix}.proj.bias"])
    return (out, weights) if return_attention else out


def mlp(x: Tensor, params: dict, prefix: str, config: CctConfig,
        rng: RngStream | None = None, training: bool = False) -> Tensor:
    x = linear(x, params[f"{prefix}.fc1.weight"], params[f"{prefix}.fc1.bias"])
    x = gelu(x, approximate=config.gelu_approximate)
    x = dropout(x, config.dropout_rate, rng, training)
    x = linear(x, params[f"{prefix}.fc2.weight"], params[f"{prefix}.fc2.bias"])
    return dropout(x, config.dropout_rate, rng, training)


def encoder_block(tokens: Tensor, params: dict, index: int, config: CctConfig,
                  rng: RngStream | None = None, training: bool = False) -> Tensor:
    """Pre-norm residual block: x + MHSA(LN(x)), then + MLP(LN(x))."""
    pre = f"encoder.block{index}"
    eps = config.layer_norm_eps
    y = layer_norm(tokens, params[f"{pre}.norm1.gamma"], params[f"{pre}.norm1.beta"], eps)
    x = add(tokens, mhsa(y, params, pre, config, rng, training))
    y = layer_norm(x, params[f"{pre}.norm2.gamma"], params[f"{pre}.norm2.beta"], eps)
    return add(x, mlp(y, params, f"{pre}.mlp", config, rng, training))


def seq_pool(tokens: Tensor, params: dict, return_weights: bool = False):
    """Attention pooling: softmax over the sequence of a learned d -> 1 score."""
    n, seq, d = tokens.shape
    scores = matmul(tokens, params["seqpool.attention.weight"])      # (N, n, 1)
    weights = softmax(scores, axis=1)
    pooled = reshape(matmul(swap_last(weights), tokens), (n, d))      # (N, d)
    return (pooled, weights) if return_weights else pooled


def embed(images: Tensor, params: dict, config: CctConfig) -> Tensor:
    if config.tokenizer == "convolutional":
        return tokenize(images, params, config)
    return patch_embed(images, params, config)


def forward(images, params: dict, config: CctConfig, rng: RngStream | None = None,
            training: bool = False, check: bool = True) -> Tensor:
    """Logits of shape (N, num_classes)."""
    if check:
        check_params(params, config)
    dtype = next(iter(params.values())).dtype
    tokens = embed(_as_images(images, config, dtype), params, config)
    return classify_tokens(tokens, params, config, rng, training)


def classify_tokens(x: Tensor, params: dict, config: CctConfig, rng: RngStream | None = None,
                    training: bool = False) -> Tensor:
    """Everything after the tokenizer: positions, encoder, final norm, pooling, head."""
    n, seq, d = x.shape
    if config.pooling == "class_token":
        cls = broadcast_to(params["class_token"], (n, 1, d))
        x = concat([cls, x], axis=1)
        seq += 1
    if config.positional_embedding == "sinusoidal":
        x = add(x, Tensor(sinusoidal_positions(seq, d, x.dtype)))
    elif config.positional_embedding == "learnable":
        x = add(x, params["positional.embedding"])
    x = dropout(x, config.dropout_rate, rng, training)

    for b in range(config.encoder_depth):
        x = encoder_block(x, params, b, config, rng, training)
    x = layer_norm(x, params["final_norm.gamma"], params["final_norm.beta"], config.layer_norm_eps)

    pooled = seq_pool(x, params) if config.pooling == "seqpool" else getitem(x, (slice(None), 0))
    return linear(pooled, params["head.weight"], params["head.bias"])


def sequence_length(config: CctConfig) -> int:
    return plan_tokenizer(config).sequence_length
