from typing import Any, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from .const import GROUPS
from .utils import parse_groups

AdaptMode = Literal["fine_tune", "se", "bn", "se_bn"]
Split = Literal["pretrain", "dev", "test"]

IntQuad = Tuple[int, int, int, int]


def split_csv(value: Any) -> Any:
    if isinstance(value, str):
        return tuple(x.strip() for x in value.split(",") if x.strip())
    return value


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    channels: IntQuad = (8, 16, 32, 64)
    blocks_per_group: IntQuad = (2, 2, 2, 2)
    reduction_ratio: int = 4
    mel_bins: int = 24
    embedding_dim: int = 64
    num_classes: int = 200
    use_se: bool = True
    attention_dim: int = 32
    """Hidden size of the attentive statistics pooling scorer"""
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    asp_eps: float = 1e-5
    """Variance floor of the pooled standard deviation"""

    @field_validator("channels", "blocks_per_group", mode="before")
    @classmethod
    def parse_quads(cls, value: Any) -> Any:
        return split_csv(value)

    @model_validator(mode="after")
    def check_widths(self) -> "ModelConfig":
        if any(c % self.reduction_ratio for c in self.channels):
            raise ValueError(
                f"every group width {self.channels} must be divisible "
                f"by the reduction ratio {self.reduction_ratio}",
            )
        if self.mel_bins % 8:
            raise ValueError(f"mel_bins ({self.mel_bins}) must be divisible by 8")
        if min(self.blocks_per_group) < 1 or self.num_classes < 2:
            raise ValueError("every group needs a block and there must be 2+ classes")
        return self

    @property
    def pooled_dim(self) -> int:
        """Channels times frequency bins entering the pooling layer."""
        return self.channels[-1] * (self.mel_bins // 8)


def tiny_config(**kwargs) -> ModelConfig:
    return ModelConfig(**kwargs)


def paper_config(**kwargs) -> ModelConfig:
    params = {
        "channels": (32, 64, 128, 256),
        "blocks_per_group": (3, 4, 6, 3),
        "reduction_ratio": 8,
        "mel_bins": 80,
        "embedding_dim": 256,
        "num_classes": 5994,
        "attention_dim": 128,
    }
    params.update(kwargs)
    return ModelConfig(**params)


MODEL_PRESETS = {"tiny": tiny_config, "paper": paper_config}


class AdaptPolicy(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: AdaptMode = "se_bn"
    groups: Tuple[int, ...] = GROUPS
    """Ignored by fine_tune"""
    bn_stats_refresh: bool = True

    @field_validator("groups", mode="before")
    @classmethod
    def parse_group_list(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(parse_groups(value))
        return value

    @model_validator(mode="after")
    def check_groups(self) -> "AdaptPolicy":
        if any(g not in GROUPS for g in self.groups):
            raise ValueError(f"groups must be drawn from {GROUPS}, got {self.groups}")
        if self.mode != "fine_tune" and not self.groups:
            raise ValueError(f"adapter mode {self.mode} needs at least one group")
        return self

    @property
    def tag(self) -> str:
        if self.mode == "fine_tune" or tuple(sorted(self.groups)) == GROUPS:
            return self.mode
        return f"{self.mode}@" + "".join(f"G{g}" for g in sorted(self.groups))


class DomainSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    tilt: Tuple[float, ...]
    """Per-bin gain, one value per frequency bin"""
    noise_std: float = 0.0
    compress: float = 0.0
    """alpha of tanh(alpha * x) / alpha, 0 passes frames through"""
    tremolo_rate: float = 0.0
    """Cycles per frame, 0 disables the tremolo"""
    tremolo_depth: float = 0.0


class UtteranceRecord(BaseModel):
    id: str  # noqa: A003
    speaker: int
    domain: str
    split: Split
    path: str
    frames: int


class TrialRecord(BaseModel):
    speaker: int
    """Enrolled speaker"""
    utterance: str
    """Test utterance id"""
    target: bool
    score: Optional[float] = None


class ResultRow(BaseModel):
    method: str
    n_params: int
    domain: str
    n_speakers: int
    seed: int
    eer: float
    """Fraction in [0, 1]; written as a percentage"""


class CheckpointMeta(BaseModel):
    model: ModelConfig
    se_placement: str
    method: str = "pretrain"
    trainable_params: int = 0
