"""Parameter layout, initialisation and counting.

Parameters live in a plain ``dict`` mapping dotted paths to tensors, in
declaration order. Linear weights are stored as (in_features, out_features).
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import UsageError
from ..numerics import RngStream, Tensor, resolve_dtype
from .config import CctConfig, plan_tokenizer

INIT_STD = 0.02


def param_shapes(config: CctConfig) -> dict:
    """Ordered ``{path: shape}`` for every parameter of ``config``."""
    plan = plan_tokenizer(config)
    d, hd = config.embed_dim, config.hidden_dim
    shapes = {}
    if config.tokenizer == "convolutional":
        c_in = config.in_channels
        for i, c_out in enumerate(config.stage_channels()):
            k = config.conv_kernel
            shapes[f"tokenizer.stage{i}.kernel"] = (c_out, c_in, k, k)
            shapes[f"tokenizer.stage{i}.bias"] = (c_out,)
            c_in = c_out
    else:
        p = config.patch_size
        shapes["tokenizer.patch.weight"] = (config.in_channels * p * p, d)
        shapes["tokenizer.patch.bias"] = (d,)

    seq = plan.sequence_length
    if config.pooling == "class_token":
        shapes["class_token"] = (1, 1, d)
        seq += 1
    if config.positional_embedding == "learnable":
        shapes["positional.embedding"] = (seq, d)

    for b in range(config.encoder_depth):
        pre = f"encoder.block{b}"
        shapes[f"{pre}.norm1.gamma"] = (d,)
        shapes[f"{pre}.norm1.beta"] = (d,)
        shapes[f"{pre}.qkv.weight"] = (d, 3 * d)
        shapes[f"{pre}.qkv.bias"] = (3 * d,)
        shapes[f"{pre}.proj.weight"] = (d, d)
        shapes[f"{pre}.proj.bias"] = (d,)
        shapes[f"{pre}.norm2.gamma"] = (d,)
        shapes[f"{pre}.norm2.beta"] = (d,)
        shapes[f"{pre}.mlp.fc1.weight"] = (d, hd)
        shapes[f"{pre}.mlp.fc1.bias"] = (hd,)
        shapes[f"{pre}.mlp.fc2.weight"] = (hd, d)
        shapes[f"{pre}.mlp.fc2.bias"] = (d,)

    shapes["final_norm.gamma"] = (d,)
    shapes["final_norm.beta"] = (d,)
    if config.pooling == "seqpool":
        shapes["seqpool.attention.weight"] = (d, 1)
    shapes["head.weight"] = (d, config.num_classes)
    shapes["head.bias"] = (config.num_classes,)
    return shapes


def init_params(config: CctConfig, rng: RngStream, dtype=None) -> dict:
    """Fresh parameters: truncated normals for weights, zeros/ones for affine terms.

    Projection weights use std 0.02; convolution kernels use the He
    fan-in scale so activations survive several ReLU stages.
    """
    dtype = resolve_dtype(dtype)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".bias") or name.endswith(".beta"):
            values = np.zeros(shape, dtype=dtype)
        elif name.endswith(".gamma"):
            values = np.ones(shape, dtype=dtype)
        elif name.endswith(".kernel"):
            fan_in = int(np.prod(shape[1:]))
            values = rng.truncated_normal(shape, math.sqrt(2.0 / fan_in), dtype=dtype)
        else:
            values = rng.truncated_normal(shape, INIT_STD, dtype=dtype)
        params[name] = Tensor(values, requires_grad=True, dtype=dtype)
    return params


def count_params(config: CctConfig) -> int:
    """Closed-form parameter count."""
    d, hd, c = config.embed_dim, config.hidden_dim, config.num_classes
    total = 0
    if config.tokenizer == "convolutional":
        k2 = config.conv_kernel ** 2
        c_in = config.in_channels
        for c_out in config.stage_channels():
            total += c_out * (c_in * k2 + 1)
            c_in = c_out
    else:
        total += config.in_channels * config.patch_size ** 2 * d + d

    n = plan_tokenizer(config).sequence_length
    if config.pooling == "class_token":
        total += d
        n += 1
    if config.positional_embedding == "learnable":
        total += n * d

    total += config.encoder_depth * block_param_count(d, hd)
    total += 2 * d
    if config.pooling == "seqpool":
        total += d
    total += d * c + c
    return total


def block_param_count(embed_dim: int, hidden_dim: int) -> int:
    d, hd = embed_dim, hidden_dim
    qkv = 3 * (d * d + d)
    proj = d * d + d
    norms = 2 * 2 * d
    mlp = (d * hd + hd) + (hd * d + d)
    return qkv + proj + norms + mlp


def check_params(params: dict, config: CctConfig) -> None:
    expected = param_shapes(config)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise UsageError(f"parameters do not match config (missing {missing}, unexpected {extra})")
    for name, shape in expected.items():
        if tuple(params[name].shape) != tuple(shape):
            raise UsageError(f"parameter {name} has shape {params[name].shape}, config needs {shape}")


def zero_grads(params: dict) -> None:
    for t in params.values():
        t.grad = None
