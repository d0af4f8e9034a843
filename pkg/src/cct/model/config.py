"""Model hyperparameters and the tokenizer geometry planner."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources

from ..errors import ConfigError, ParameterError, TokenizerGeometryError
from ..numerics.ops import output_extent

POSITIONAL = ("sinusoidal", "learnable", "none")
POOLING = ("seqpool", "class_token")
TOKENIZERS = ("convolutional", "patch")
MIN_STEM = 16


@dataclass(frozen=True)
class CctConfig:
    image_size: tuple = (256, 256)
    in_channels: int = 1
    tokenizer_stages: int = 4
    conv_kernel: int = 5
    conv_stride: int = 1
    conv_padding: int = 1
    pool_kernel: int = 5
    pool_stride: int = 2
    pool_padding: int = 1
    stem_channels: int | None = None
    embed_dim: int = 512
    num_heads: int = 8
    encoder_depth: int = 2
    mlp_ratio: float = 2
    dropout_rate: float = 0.1
    attention_dropout_rate: float = 0.1
    num_classes: int = 2
    positional_embedding: str = "sinusoidal"
    pooling: str = "seqpool"
    tokenizer: str = "convolutional"
    patch_size: int = 16
    gelu_approximate: bool = False
    layer_norm_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        if len(self.image_size) != 2 or min(self.image_size) < 1:
            raise ParameterError(f"image_size must be two positive extents, got {self.image_size}")
        if self.in_channels not in (1, 3):
            raise ParameterError(f"in_channels must be 1 or 3, got {self.in_channels}")
        if self.embed_dim < 1 or self.num_heads < 1 or self.embed_dim % self.num_heads:
            raise ParameterError(f"embed_dim {self.embed_dim} is not divisible by "
                                 f"num_heads {self.num_heads}")
        if self.num_classes < 2:
            raise ParameterError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.encoder_depth < 0 or self.tokenizer_stages < 1:
            raise ParameterError("encoder_depth must be >= 0 and tokenizer_stages >= 1")
        if self.hidden_dim < 1:
            raise ParameterError(f"mlp_ratio {self.mlp_ratio} gives an empty MLP")
        for name in ("dropout_rate", "attention_dropout_rate"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ParameterError(f"{name} must lie in [0, 1)")
        for name, allowed in (("positional_embedding", POSITIONAL), ("pooling", POOLING),
                              ("tokenizer", TOKENIZERS)):
            if getattr(self, name) not in allowed:
                raise ParameterError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.positional_embedding == "sinusoidal" and self.embed_dim % 2:
            raise ParameterError("sinusoidal positions need an even embed_dim")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def hidden_dim(self) -> int:
        return int(round(self.embed_dim * self.mlp_ratio))

    @property
    def variant(self) -> str:
        """ViT-Lite, CVT or CCT, as determined by tokenizer and pooling."""
        if self.tokenizer == "convolutional":
            return "CCT" if self.pooling == "seqpool" else "CCT/class-token"
        return "CVT" if self.pooling == "seqpool" else "ViT-Lite"

    def stage_channels(self) -> list:
        """Output channels per tokenizer stage, doubling up to embed_dim."""
        stages = self.tokenizer_stages
        if self.stem_channels is not None:
            chans = [self.stem_channels * 2 ** i for i in range(stages)]
        else:
            floor = min(MIN_STEM, self.embed_dim)
            chans = [max(floor, self.embed_dim // 2 ** (stages - 1 - i)) for i in range(stages)]
        chans[-1] = self.embed_dim
        return [min(c, self.embed_dim) for c in chans]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["image_size"] = list(self.image_size)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "CctConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"invalid model config: {exc}") from exc


PRESET_NAMES = ("table5-literal", "table5-literal-3stage", "table5-compat", "tiny-test")


def load_preset(name: str) -> dict:
    """Raw run-config document for a shipped preset."""
    if name.endswith(".json"):
        name = name[:-5]
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {name!r}; shipped presets: {', '.join(PRESET_NAMES)}")
    text = resources.files("cct.presets").joinpath(f"{name}.json").read_text()
    return json.loads(text)


def preset_config(name: str) -> CctConfig:
    return CctConfig.from_dict(load_preset(name).get("model", {}))


# ---------------------------------------------------------------------------
# tokenizer geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StageRecord:
    index: int
    in_extent: tuple
    post_conv_extent: tuple
    post_pool_extent: tuple
    channels: int


@dataclass(frozen=True)
class TokenizerPlan:
    stages: tuple = field(default_factory=tuple)
    sequence_length: int = 0
    token_dim: int = 0
    grid: tuple = (0, 0)

    def table(self) -> str:
        lines = [f"{'stage':>5}  {'input':>9}  {'conv':>9}  {'pool':>9}  {'channels':>8}"]
        for st in self.stages:
            fmt = lambda e: f"{e[0]}x{e[1]}"  # noqa: E731
            lines.append(f"{st.index + 1:>5}  {fmt(st.in_extent):>9}  {fmt(st.post_conv_extent):>9}"
                         f"  {fmt(st.post_pool_extent):>9}  {st.channels:>8}")
        lines.append(f"sequence_length = {self.sequence_length}, token_dim = {self.token_dim}")
        return "\n".join(lines)


def _stage_extent(label, size, kernel, stride, padding, trace):
    padded = size + 2 * padding
    out = output_extent(size, kernel, stride, padding)
    if padded < kernel or out < 1:
        trace.append(f"{label}: floor(({size} + 2*{padding} - {kernel})/{stride}) + 1 -> infeasible "
                     f"(padded extent {padded} < kernel {kernel})")
        return None
    trace.append(f"{label}: floor(({size} + 2*{padding} - {kernel})/{stride}) + 1 = {out}")
    return out


def plan_tokenizer(config: CctConfig) -> TokenizerPlan:
    """Spatial extents of every conv/pool stage, or TokenizerGeometryError."""
    if config.tokenizer == "patch":
        h, w = config.image_size
        p = config.patch_size
        if p < 1 or h % p or w % p:
            raise ParameterError(f"image {h}x{w} is not divisible by patch_size {p}")
        rec = StageRecord(0, (h, w), (h // p, w // p), (h // p, w // p), config.embed_dim)
        return TokenizerPlan((rec,), (h // p) * (w // p), config.embed_dim, (h // p, w // p))

    extents = list(config.image_size)
    channels = config.stage_channels()
    trace, stages = [], []
    for idx in range(config.tokenizer_stages):
        record = [tuple(extents)]
        for op, (k, s, p) in (("conv", (config.conv_kernel, config.conv_stride, config.conv_padding)),
                              ("pool", (config.pool_kernel, config.pool_stride, config.pool_padding))):
            new = []
            for axis, size in zip("HW", extents):
                out = _stage_extent(f"stage {idx + 1} {op} {axis}", size, k, s, p, trace)
                if out is None:
                    raise TokenizerGeometryError(
                        f"tokenizer stage {idx + 1} of {config.tokenizer_stages}: {op} collapses the "
                        f"{axis} extent {size} (kernel {k}, stride {s}, padding {p})\n"
                        + "\n".join(trace), stage=idx + 1, trace=trace)
                new.append(out)
            extents = new
            record.append(tuple(extents))
        stages.append(StageRecord(idx, record[0], record[1], record[2], channels[idx]))
    return TokenizerPlan(tuple(stages), extents[0] * extents[1], config.embed_dim, tuple(extents))
