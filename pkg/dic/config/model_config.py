from dataclasses import dataclass
from enum import Enum
from typing import Any

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from dic.errors import ConfigError


class Variant(str, Enum):
    ISOTROPIC = "Isotropic"
    ISOTROPIC_SKIP = "IsotropicSkip"
    UNET_DENSE = "UNetDense"
    UNET_SPARSE_SKIP = "UNetSparseSkip"

    @property
    def hourglass(self) -> bool:
        return self in (Variant.UNET_DENSE, Variant.UNET_SPARSE_SKIP)

    @property
    def has_skips(self) -> bool:
        return self is not Variant.ISOTROPIC


class Activation(str, Enum):
    GELU = "gelu"
    SILU = "silu"


class Injection(str, Enum):
    MID_BLOCK = "mid_block"
    PRE_BLOCK = "pre_block"


STAGE_IDS = ("enc0", "enc1", "mid", "dec1", "dec0")
STAGE_ROLES = ("encoder", "encoder", "mid", "decoder", "decoder")


@dataclass(frozen=True)
class StageSpec:
    stage_id: str
    role: str
    resolution: int
    channels: int
    depth: int


class ModelConfig(BaseModel):
    """Full architectural description; one value determines one network."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    variant: Variant = Variant.UNET_SPARSE_SKIP
    base_channels: int = 96
    stage_depths: tuple[int, int, int, int, int] = (6, 6, 5, 6, 6)
    groups: int = 16
    skip_stride: int = 2
    num_classes: int = 1000
    in_channels: int = 4
    image_size: int = 32
    activation: Activation = Activation.GELU
    injection: Injection = Injection.MID_BLOCK
    gating: bool = True
    stage_specific_embeddings: bool = True
    label_drop_prob: float = 0.1
    num_timesteps: int = 1000
    freq_dim: int = 512
    cond_mlp_ratio: int = 2

    @field_validator("stage_depths", mode="before")
    @classmethod
    def _split_depths(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(int(v) for v in value.replace("[", "").replace("]", "").split(",") if v.strip())
        return value

    @model_validator(mode="after")
    def _check_invariants(self) -> "ModelConfig":
        if self.base_channels < 1:
            raise ConfigError("base_channels must be positive", field="base_channels")
        if self.groups < 1 or self.base_channels % self.groups != 0:
            raise ConfigError(
                f"channels {self.base_channels} not divisible by groups {self.groups}", field="groups"
            )
        if any(d < 1 for d in self.stage_depths):
            raise ConfigError("every stage needs at least one block", field="stage_depths")
        if self.variant.has_skips and (
            self.stage_depths[0] != self.stage_depths[4] or self.stage_depths[1] != self.stage_depths[3]
        ):
            raise ConfigError("encoder and decoder depths must mirror for skip variants", field="stage_depths")
        if self.image_size < 4 or self.image_size % 4 != 0:
            raise ConfigError("image_size must be a positive multiple of 4", field="image_size")
        if self.skip_stride < 1:
            raise ConfigError("skip_stride must be >= 1", field="skip_stride")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1", field="num_classes")
        if self.in_channels < 1:
            raise ConfigError("in_channels must be >= 1", field="in_channels")
        if not 0.0 <= self.label_drop_prob < 1.0:
            raise ConfigError("label_drop_prob must be in [0, 1)", field="label_drop_prob")
        if self.num_timesteps < 1:
            raise ConfigError("num_timesteps must be >= 1", field="num_timesteps")
        if self.freq_dim < 2 or self.freq_dim % 2 != 0:
            raise ConfigError("freq_dim must be even", field="freq_dim")
        if self.cond_mlp_ratio < 1:
            raise ConfigError("cond_mlp_ratio must be >= 1", field="cond_mlp_ratio")
        return self

    @property
    def effective_skip_stride(self) -> int | None:
        """Blocks between recorded skips; None when the variant has no skips."""
        if self.variant is Variant.ISOTROPIC:
            return None
        if self.variant is Variant.UNET_SPARSE_SKIP:
            return self.skip_stride
        return 1

    @property
    def cond_channels(self) -> int:
        """Number of (gamma, beta[, gate]) vectors each block projects."""
        return 3 if self.gating else 2

    def stage_plan(self) -> list[StageSpec]:
        c, r = self.base_channels, self.image_size
        if self.variant.hourglass:
            channels = (c, 2 * c, 4 * c, 2 * c, c)
            resolutions = (r, r // 2, r // 4, r // 2, r)
        else:
            channels = (c,) * 5
            resolutions = (r // 2,) * 5
        return [
            StageSpec(stage_id, role, res, ch, depth)
            for stage_id, role, res, ch, depth in zip(STAGE_IDS, STAGE_ROLES, resolutions, channels, self.stage_depths)
        ]

    def skip_positions(self, depth: int) -> list[int]:
        """1-based encoder block indices after which a skip is recorded."""
        stride = self.effective_skip_stride
        if stride is None:
            return []
        return [k for k in range(1, depth + 1) if k % stride == 0 or k == depth]

    def replace(self, **changes: Any) -> "ModelConfig":
        return ModelConfig.model_validate({**self.model_dump(), **changes})


PRESETS: dict[str, dict[str, Any]] = {
    "DiC-micro": dict(
        base_channels=16, groups=4, stage_depths=(1, 1, 1, 1, 1), num_classes=2, image_size=16,
        in_channels=3, freq_dim=64,
    ),
    "DiC-S": dict(base_channels=96, groups=16, stage_depths=(6, 6, 5, 6, 6)),
    "DiC-B": dict(base_channels=192, groups=32, stage_depths=(6, 6, 5, 6, 6)),
    "DiC-XL": dict(base_channels=384, groups=32, stage_depths=(7, 7, 8, 7, 7)),
    "DiC-H": dict(base_channels=384, groups=32, stage_depths=(14, 14, 10, 14, 14)),
}

TABLE_PRESETS = ("DiC-S", "DiC-B", "DiC-XL", "DiC-H")


def preset(name: str, **overrides: Any) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name}; choose from {', '.join(PRESETS)}", field="model.preset")
    return ModelConfig.model_validate({**PRESETS[name], **overrides})
