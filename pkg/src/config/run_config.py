"""Run configuration models

A run configuration is read from a YAML file, merged with command-line
overrides and echoed next to every artifact a command writes. Unknown keys are
rejected at every nesting level.
"""

from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.core.errors import ConfigError

TopologyMode = Literal["soft_braid", "soft_braid_tt_only", "braid", "none"]
Archetype = Literal["crossing", "yielding", "merging", "lane_follow", "platoon"]

LR_PRESETS: Dict[str, float] = {
    "interaction": 3e-4,
    "argoverse": 1e-4,
}


class RefinerConfig(BaseModel):
    """Architecture and topology settings of the refiner"""

    model_config = ConfigDict(extra="forbid")

    iterations: int = Field(default=3, ge=1, description="Refinement iterations I")
    tau_a: float = Field(default=50.0, gt=0, description="Trajectory-trajectory radius (m)")
    tau_l: float = Field(default=10.0, gt=0, description="Trajectory-lane radius (m)")
    embed_dim: int = Field(default=64, ge=1, description="Embedding dimension D")
    heads: int = Field(default=8, ge=1, description="Attention heads H")
    topology_mode: TopologyMode = "soft_braid"
    topology_update: bool = Field(default=True, description="Recompute topology every iteration")
    lane_points: int = Field(default=10, ge=2, description="Lane points per key P")
    use_tt_attention: bool = True
    use_tl_attention: bool = True
    residual_norm: bool = Field(default=True, description="Residual + layer norm around attention")
    pe_mode: Literal["sinusoidal", "raw"] = "sinusoidal"
    pe_bands: int = Field(default=4, ge=1)
    pe_scale_m: float = Field(default=20.0, gt=0)
    braid_epsilon: float = Field(default=2.0, gt=0, description="Crossing width for braid mode (m)")
    huber_delta: float = Field(default=1.0, gt=0)
    mlp_dropout: float = Field(default=0.0, ge=0.0, le=0.0, description="Reserved; must stay 0")

    @model_validator(mode="after")
    def check_heads(self) -> "RefinerConfig":
        """Embedding dimension must split evenly across heads"""
        if self.embed_dim % self.heads != 0:
            raise ValueError(
                f"embed_dim={self.embed_dim} is not divisible by heads={self.heads}"
            )
        return self


class TrainConfig(BaseModel):
    """Optimizer and schedule settings"""

    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=64, ge=1)
    batch_size: int = Field(default=16, ge=1)
    lr: Optional[float] = Field(default=None, gt=0, description="Base learning rate; preset when unset")
    lr_preset: Literal["interaction", "argoverse"] = "interaction"
    weight_decay: float = Field(default=1e-4, ge=0)
    beta1: float = Field(default=0.9, gt=0, lt=1)
    beta2: float = Field(default=0.999, gt=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)
    grad_clip: Optional[float] = Field(default=None, gt=0, description="Global-norm clip, off when unset")
    val_fraction: float = Field(default=0.1, ge=0, lt=1)
    seed: int = 0

    @property
    def base_lr(self) -> float:
        """Explicit learning rate, else the preset value"""
        if self.lr is not None:
            return self.lr
        return LR_PRESETS[self.lr_preset]


class DataConfig(BaseModel):
    """Synthetic scenario dimensions"""

    model_config = ConfigDict(extra="forbid")

    history_len: int = Field(default=10, ge=2)
    future_len: int = Field(default=30, ge=3)
    sample_rate: float = Field(default=10.0, gt=0)
    agents_min: int = Field(default=2, ge=1)
    agents_max: int = Field(default=6, ge=1)
    modes: int = Field(default=6, ge=1, description="Coarse modes K")
    archetypes: List[Archetype] = Field(
        default_factory=lambda: ["crossing", "yielding", "merging", "lane_follow", "platoon"]
    )
    noise_std: float = Field(default=0.2, ge=0)

    @model_validator(mode="after")
    def check_agent_range(self) -> "DataConfig":
        if self.agents_min > self.agents_max:
            raise ValueError("agents_min must not exceed agents_max")
        if not self.archetypes:
            raise ValueError("archetypes must list at least one archetype")
        return self

    @property
    def agent_range(self) -> Tuple[int, int]:
        return self.agents_min, self.agents_max


class RunConfig(BaseModel):
    """Everything a command needs to be reproduced"""

    model_config = ConfigDict(extra="forbid")

    refiner: RefinerConfig = Field(default_factory=RefinerConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    seed: int = 0
    threads: int = Field(default=1, ge=1)

    @field_validator("seed", mode="after")
    @classmethod
    def check_seed(cls, v: int) -> int:
        if v < 0:
            raise ValueError("seed must be non-negative")
        return v

    def to_yaml(self) -> str:
        """Effective configuration as YAML with stable key order"""
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=True)


def deep_merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_run_config(
    path: Optional[Path] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """Read a YAML config file and apply flag overrides on top

    Raises:
        ConfigError: unreadable file, unknown keys or invalid values
    """
    raw: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                loaded = yaml.safe_load(f)
        except OSError as e:
            raise ConfigError(f"{path}: cannot read config file: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML: {e}") from e
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        raw = loaded
    if overrides:
        raw = deep_merge(raw, overrides)
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        source = str(path) if path is not None else "flags"
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"{source}: {problems}") from e
