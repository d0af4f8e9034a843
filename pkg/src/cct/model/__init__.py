"""The CCT model family: CCT, CVT and ViT-Lite share one forward pass."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import CctConfig, StageRecord, TokenizerPlan, load_preset, plan_tokenizer, preset_config
from .network import (
    classify_tokens, embed, encoder_block, forward, mhsa, patch_embed, seq_pool, sinusoidal_positions, tokenize,
)
from .params import block_param_count, check_params, count_params, init_params, param_shapes

__all__ = [
    "CctConfig", "StageRecord", "TokenizerPlan", "block_param_count", "check_params",
    "classify_tokens",
    "count_params", "embed", "encoder_block", "forward", "init_params", "load_checkpoint",
    "load_preset", "mhsa", "param_shapes", "patch_embed", "plan_tokenizer", "preset_config",
    "save_checkpoint", "seq_pool", "sinusoidal_positions", "tokenize",
]
