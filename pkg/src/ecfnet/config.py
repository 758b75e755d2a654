"""
Typed configuration for model, training, phantom data and whole runs.

Run configs are plain ``KEY=VALUE`` files (dotted section keys such as
``model.base_channels=8``) read with python-dotenv. Unknown keys are errors.
"""
import hashlib
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError, UnknownConfigKeyError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", protected_namespaces=())


class AblationSwitches(_Strict):
    use_cffm_alignment: bool = True
    use_ttm: bool = True
    use_structure_branch: bool = True


class ModelConfig(_Strict):
    base_channels: int = Field(32, ge=1)
    stages: int = Field(4, ge=2, le=4)
    residual_blocks_per_stage: int = Field(2, ge=0)
    attention_heads: int = Field(4, ge=1)
    scale_factor: int = 4
    ablation: AblationSwitches = Field(default_factory=AblationSwitches)
    instance_norm_epsilon: float = Field(1e-5, gt=0)
    ttm_alternative_binding: bool = False
    interpolation: Literal["bicubic", "zero_fill"] = "bicubic"
    dtype: Literal["float32", "float64"] = "float32"

    @field_validator("scale_factor")
    @classmethod
    def _scale_supported(cls, v: int) -> int:
        if v not in (2, 4):
            raise ValueError("scale_factor must be 2 or 4")
        return v

    @model_validator(mode="after")
    def _heads_divide_widths(self) -> "ModelConfig":
        for width in self.stage_channels:
            if width % self.attention_heads:
                raise ValueError(f"attention_heads={self.attention_heads} does not divide stage width {width}")
        return self

    @property
    def stage_channels(self) -> List[int]:
        return [self.base_channels * 2 ** k for k in range(self.stages)]

    @property
    def spatial_multiple(self) -> int:
        return 2 ** (self.stages - 1)


class TrainConfig(_Strict):
    lr: float = Field(2e-4, ge=0)
    epochs: int = Field(50, ge=1)
    batch_size: int = Field(10, ge=1)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    max_steps: Optional[int] = Field(None, ge=1)
    log_every: int = Field(10, ge=1)
    checkpoint_every: int = Field(0, ge=0)


class PhantomSpec(_Strict):
    size: int = Field(64, ge=8)
    ellipses: int = Field(10, ge=0)
    min_axis: float = Field(0.06, gt=0)
    max_axis: float = Field(0.35, gt=0)
    smoothing_sigma: float = Field(0.8, ge=0)
    noise_std: float = Field(0.0, ge=0)
    reference_contrast: Literal["t1", "pd"] = "t1"
    seed: int = 0


class DataConfig(_Strict):
    manifest: Optional[str] = None
    n: int = Field(10, ge=1)
    holdout: int = Field(0, ge=0)


class RunConfig(_Strict):
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    phantom: PhantomSpec = Field(default_factory=PhantomSpec)
    data: DataConfig = Field(default_factory=DataConfig)
    output_dir: str = "runs/default"

    def canonical(self) -> str:
        return canonical_text(self)

    @property
    def config_hash(self) -> str:
        return config_hash(self)


def flatten_config(data: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten_config(value, dotted + "."))
        else:
            flat[dotted] = value
    return flat


def _unflatten(flat: Mapping[str, Any]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for dotted, value in flat.items():
        node = nested
        parts = dotted.split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise UnknownConfigKeyError(dotted)
            node = child
        node[parts[-1]] = value
    return nested


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def canonical_text(config: BaseModel) -> str:
    flat = flatten_config(config.model_dump(mode="json"))
    return "".join(f"{key}={_format_value(flat[key])}\n" for key in sorted(flat) if flat[key] is not None)


def config_hash(config: BaseModel) -> str:
    return hashlib.sha256(canonical_text(config).encode("utf-8")).hexdigest()[:12]


def build_run_config(values: Mapping[str, Any]) -> RunConfig:
    """Validate dotted key/value pairs; the first unknown key is reported by name"""
    cleaned = {k: v for k, v in values.items() if v not in (None, "")}
    try:
        return RunConfig.model_validate(_unflatten(cleaned))
    except ValidationError as exc:
        for err in exc.errors():
            if err["type"] == "extra_forbidden":
                raise UnknownConfigKeyError(".".join(str(p) for p in err["loc"])) from exc
        first = exc.errors()[0]
        raise ConfigError(f"invalid config value for {'.'.join(str(p) for p in first['loc'])}: {first['msg']}",
                          key=".".join(str(p) for p in first["loc"])) from exc


def load_run_config(path: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    values: Dict[str, Any] = {}
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}", path=str(path))
        values.update(dotenv_values(path))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return build_run_config(values)


def write_run_config(config: RunConfig, directory: Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    target = directory / "run_config.env"
    target.write_text(config.canonical(), encoding="utf-8")
    return target
