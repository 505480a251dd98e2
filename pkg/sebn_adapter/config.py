import os
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple, Union

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from . import kv_parser
from .const import GROUPS
from .errors import ConfigError
from .types import MODEL_PRESETS, AdaptPolicy, ModelConfig, split_csv
from .utils import parse_groups


class EnvConfig(BaseModel):
    sebn_seed: Optional[int] = None
    sebn_log_level: str = "INFO"
    sebn_workers: int = 4


def load_env_config() -> EnvConfig:
    """Reads `SEBN_*` variables; called per command so a bad value is a ConfigError."""
    env = {k.lower(): v for k, v in os.environ.items() if k.upper().startswith("SEBN_")}
    try:
        return EnvConfig.model_validate(env)
    except ValidationError as e:
        raise ConfigError(f"environment: {_one_line(e)}") from e


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LossConfig(Section):
    name: Literal["aam", "ge2e"] = "aam"
    """Pretraining loss; adaptation always uses GE2E"""
    margin: float = Field(0.2, ge=0.0, le=0.5)
    scale: float = Field(32.0, gt=0.0)
    margin_ramp: float = Field(0.3, ge=0.0, le=1.0)
    """Fraction of pretraining epochs over which the margin ramps up, 0 disables"""
    ge2e_w_init: float = Field(10.0, gt=0.0)
    ge2e_b_init: float = -5.0


class DataConfig(Section):
    domains: Tuple[str, ...] = ("ent", "int", "live", "sing")
    pretrain_speakers: int = Field(200, ge=2)
    pretrain_utts: int = Field(20, ge=1)
    heldout_speakers: int = Field(50, ge=2)
    """Unseen source-domain speakers scored after pretraining"""
    target_speakers: int = Field(60, ge=2)
    target_utts: int = Field(10, ge=7)
    split_speakers: int = Field(50, ge=2)
    """Speakers in each low-resource dev/test split"""
    mixing_scale: float = Field(0.35, gt=0.0)

    @field_validator("domains", mode="before")
    @classmethod
    def parse_domains(cls, value: Any) -> Any:
        return split_csv(value)


class TrainConfig(Section):
    seed: int
    epochs: int = Field(8, ge=1)
    adapt_epochs: int = Field(10, ge=1)
    lr: float = Field(1e-3, gt=0.0)
    adapt_lr: float = Field(1e-4, gt=0.0)
    """Learning rate of fine_tune adaptation"""
    adapter_lr: float = Field(5e-3, gt=0.0)
    """Learning rate of the se / bn / se_bn adapters.

    Larger than `adapt_lr`: the adapters hold under 1.5% of the weights and get
    one short GE2E schedule, so at 1e-4 they barely leave their pretrained values.
    Full fine-tuning keeps 1e-4.
    """
    betas: Tuple[float, float] = (0.9, 0.999)
    warmup: float = Field(0.05, ge=0.0, lt=1.0)
    """Fraction of optimizer steps with a linear learning-rate ramp"""
    batch_size: int = Field(32, ge=2)
    segment_frames: int = Field(32, ge=16)
    ge2e_speakers: int = Field(8, ge=2)
    ge2e_utts: int = Field(4, ge=2)

    @field_validator("betas", mode="before")
    @classmethod
    def parse_betas(cls, value: Any) -> Any:
        return split_csv(value)


class EvalConfig(Section):
    workers: int = Field(4, ge=1)


class SweepConfig(Section):
    """Extra rows of the `experiment` command; every axis is off by default."""

    groups: Tuple[int, ...] = ()
    """One SE adapter row per listed group, tagged `se@G<g>`"""
    split_sizes: Tuple[int, ...] = ()
    """Low-resource split sizes scored besides `data.split_speakers`"""
    use_se: Tuple[bool, ...] = ()
    """Architectures to pretrain; empty keeps `model.use_se` alone"""

    @field_validator("groups", mode="before")
    @classmethod
    def parse_group_list(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(parse_groups(value)) if value.strip() else ()
        return value

    @field_validator("split_sizes", "use_se", mode="before")
    @classmethod
    def parse_list(cls, value: Any) -> Any:
        return split_csv(value)

    @field_validator("groups")
    @classmethod
    def check_groups(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(g not in GROUPS for g in value):
            raise ValueError(f"groups must be drawn from {GROUPS}, got {value}")
        return value

    @field_validator("split_sizes")
    @classmethod
    def check_sizes(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(n < 2 for n in value):
            raise ValueError("split sizes need at least 2 speakers")
        return tuple(sorted(set(value)))


class ExperimentConfig(Section):
    model: ModelConfig = ModelConfig()
    loss: LossConfig = LossConfig()
    adapt: AdaptPolicy = AdaptPolicy()
    data: DataConfig = DataConfig()
    train: TrainConfig
    eval: EvalConfig = EvalConfig()  # noqa: A003
    sweep: SweepConfig = SweepConfig()

    @model_validator(mode="after")
    def check_split_sizes(self) -> "ExperimentConfig":
        if (largest := max(self.sweep.split_sizes, default=0)) > self.data.target_speakers:
            raise ValueError(
                f"sweep.split_sizes needs {largest} target speakers,"
                f" data.target_speakers is {self.data.target_speakers}",
            )
        return self


def _one_line(e: ValidationError) -> str:
    errors = []
    for err in e.errors():
        loc = ".".join(str(x) for x in err["loc"])
        errors.append(f"{loc}: {err['msg']}" if loc else err["msg"])
    return "; ".join(errors)


def resolve_model(section: Dict[str, Any]) -> Dict[str, Any]:
    """Expands `model.preset` into the preset's fields, explicit keys win."""
    section = dict(section)
    if preset := section.pop("preset", None):
        if preset not in MODEL_PRESETS:
            raise ConfigError(f"model.preset must be one of {sorted(MODEL_PRESETS)}")
        base = MODEL_PRESETS[preset]().model_dump()
        base.update(section)
        section = base
    return section


def build_model_config(section: Dict[str, Any]) -> ModelConfig:
    try:
        return ModelConfig.model_validate(resolve_model(section))
    except ValidationError as e:
        raise ConfigError(_one_line(e)) from e


def build_config(tree: Dict[str, Dict[str, Any]]) -> ExperimentConfig:
    tree = {k: dict(v) for k, v in tree.items()}
    if "model" in tree:
        tree["model"] = resolve_model(tree["model"])

    env = load_env_config()
    if env.sebn_seed is not None:
        tree.setdefault("train", {})["seed"] = env.sebn_seed

    try:
        return ExperimentConfig.model_validate(tree)
    except ValidationError as e:
        raise ConfigError(_one_line(e)) from e


def read_config_tree(path: Union[str, Path]) -> Dict[str, Dict[str, str]]:
    try:
        text = Path(path).read_text(encoding="u8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from e
    return kv_parser.nest(kv_parser.parse(text))


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    return build_config(read_config_tree(path))


def dump_config(config: ExperimentConfig) -> str:
    lines = []
    for section, values in config.model_dump().items():
        for key, value in values.items():
            if isinstance(value, (list, tuple)):
                value = ",".join(str(x) for x in value)
            elif isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{section}.{key} = {value}")
    return "\n".join(lines) + "\n"
