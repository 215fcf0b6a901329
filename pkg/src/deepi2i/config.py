"""Configuration objects shared by every stage of the pipeline.

All network shapes are derived from :class:`ArchConfig`; nothing else in the
package hard-codes a channel count or a resolution.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, NamedTuple

FIRST_LEVEL = 3


class ConfigError(ValueError):
    """Raised for configurations that cannot describe a valid model or run."""


class TapLevel(NamedTuple):
    level: int
    resolution: int
    multiplier: int


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class ArchConfig:
    resolution: int = 64
    base_width: int = 16
    num_classes: int = 8
    z_dim: int = 120
    embed_dim: int = 128
    num_levels: int = 4
    # 0 means resolution // 32, the BigGAN-128 layout scaled to `resolution`.
    bottleneck_resolution: int = 0
    # None activates every tap level.
    adaptor_levels: tuple[int, ...] | None = None
    adaptor_mode: str = "learned"
    fusion_weight: float = 0.1
    adv_loss_kind: str = "hinge"
    use_orthogonal_reg: bool = False
    spectral_norm: bool = True
    # 0 disables self-attention; otherwise one attention layer at this resolution.
    attention_resolution: int = 0

    def __post_init__(self):
        if self.adaptor_levels is not None:
            object.__setattr__(self, "adaptor_levels", tuple(sorted(int(v) for v in self.adaptor_levels)))
        self.validate()

    @classmethod
    def paper_scale(cls, num_classes: int = 149, **kw) -> "ArchConfig":
        return cls(resolution=128, base_width=96, num_classes=num_classes, **kw)

    @property
    def bottleneck(self) -> int:
        return self.bottleneck_resolution or max(self.resolution // 32, 1)

    @property
    def num_blocks(self) -> int:
        """Downsampling blocks in the encoder (and upsampling blocks in the generator)."""
        return int(math.log2(self.resolution // self.bottleneck))

    @property
    def top_multiplier(self) -> int:
        return 2 ** (self.num_blocks - 1)

    def encoder_multiplier(self, block: int) -> int:
        return 2 ** block

    def generator_multiplier(self, resolution: int) -> int:
        return min(self.top_multiplier, self.resolution // resolution)

    @property
    def tap_levels(self) -> list[TapLevel]:
        first_block = self.num_blocks - self.num_levels
        taps = []
        for i in range(self.num_levels):
            block = first_block + i
            taps.append(TapLevel(FIRST_LEVEL + i, self.resolution >> (block + 1), self.encoder_multiplier(block)))
        return taps

    @property
    def levels(self) -> list[int]:
        return [t.level for t in self.tap_levels]

    @property
    def active_adaptor_levels(self) -> list[int]:
        if self.adaptor_levels is None:
            return self.levels
        return list(self.adaptor_levels)

    def tap_shape(self, level: int) -> tuple[int, int, int]:
        """(channels, height, width) of the encoder/discriminator activation at ``level``."""
        t = self._tap(level)
        return (t.multiplier * self.base_width, t.resolution, t.resolution)

    def adapted_shape(self, level: int) -> tuple[int, int, int]:
        t = self._tap(level)
        return (self.generator_multiplier(t.resolution) * self.base_width, t.resolution, t.resolution)

    def _tap(self, level: int) -> TapLevel:
        for t in self.tap_levels:
            if t.level == level:
                return t
        raise ConfigError(f"unknown tap level {level}; configured levels are {self.levels}")

    def validate(self) -> None:
        if not _is_pow2(self.resolution):
            raise ConfigError(f"resolution must be a power of two, got {self.resolution}")
        b = self.bottleneck
        if not _is_pow2(b):
            raise ConfigError(f"bottleneck resolution must be a power of two, got {b}")
        if self.resolution < 4 * b:
            raise ConfigError(f"resolution {self.resolution} is below 4x the smallest tap ({b})")
        if self.num_levels < 2:
            raise ConfigError("at least two tap levels are required")
        if self.num_levels > self.num_blocks:
            raise ConfigError(
                f"{self.num_levels} tap levels need {self.num_levels} downsampling blocks, "
                f"only {self.num_blocks} fit between {self.resolution} and {b}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")
        if self.z_dim < self.num_blocks + 1:
            raise ConfigError(f"z_dim must be at least {self.num_blocks + 1} to split across blocks")
        if self.embed_dim < 1 or self.base_width < 1:
            raise ConfigError("embed_dim and base_width must be positive")
        if self.adaptor_mode not in ("learned", "direct"):
            raise ConfigError(f"adaptor_mode must be 'learned' or 'direct', got {self.adaptor_mode!r}")
        if self.adv_loss_kind not in ("hinge", "logistic"):
            raise ConfigError(f"adv_loss_kind must be 'hinge' or 'logistic', got {self.adv_loss_kind!r}")
        if self.adaptor_levels is not None:
            unknown = set(self.adaptor_levels) - set(self.levels)
            if unknown:
                raise ConfigError(f"adaptor levels {sorted(unknown)} are not tap levels {self.levels}")
        if self.attention_resolution and not _is_pow2(self.attention_resolution):
            raise ConfigError("attention_resolution must be 0 or a power of two")

    def fingerprint(self) -> str:
        blob = json.dumps(to_flat(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def transfer_signature(self) -> tuple:
        """Fields that must agree between a pretrained checkpoint and a target model."""
        return (self.resolution, self.base_width, self.bottleneck, self.num_blocks,
                self.z_dim, self.embed_dim, self.spectral_norm, self.attention_resolution)


def default_rec_alpha() -> dict[int, float]:
    return {}


@dataclass(frozen=True)
class LossConfig:
    lambda_adv: float = 1.0
    lambda_rec: float = 1.0
    # Per-level weights; levels absent here fall back to 0.1, except level 3 at 0.01.
    rec_alpha: dict[int, float] = field(default_factory=default_rec_alpha)
    rec_reduction: str = "mean"
    adv_loss_kind: str = "hinge"
    orthogonal_reg_strength: float = 0.0

    def __post_init__(self):
        if self.lambda_adv < 0 or self.lambda_rec < 0 or self.orthogonal_reg_strength < 0:
            raise ConfigError("loss weights must be non-negative")
        if any(v < 0 for v in self.rec_alpha.values()):
            raise ConfigError("reconstruction level weights must be non-negative")
        if self.rec_reduction not in ("mean", "sum"):
            raise ConfigError(f"rec_reduction must be 'mean' or 'sum', got {self.rec_reduction!r}")
        if self.adv_loss_kind not in ("hinge", "logistic"):
            raise ConfigError(f"adv_loss_kind must be 'hinge' or 'logistic', got {self.adv_loss_kind!r}")

    def alpha(self, level: int) -> float:
        if level in self.rec_alpha:
            return self.rec_alpha[level]
        return 0.01 if level == FIRST_LEVEL else 0.1

    def alphas(self, levels) -> dict[int, float]:
        return {lv: self.alpha(lv) for lv in levels}


@dataclass(frozen=True)
class TrainConfig:
    total_iterations: int = 2000
    # None means 10% of total_iterations (only used when a pretrained model is transferred).
    phase1_iterations: int | None = None
    batch_size: int = 32
    lr_generator: float = 1e-4
    lr_other: float = 4e-4
    beta1: float = 0.0
    beta2: float = 0.999
    adam_eps: float = 1e-8
    d_steps_per_g_step: int = 1
    ema_decay: float = 0.9999
    seed: int = 0
    checkpoint_every: int = 0
    log_every: int = 10
    eval_every: int = 0
    eval_n_gen_per_class: int = 64
    grad_clip: float = 0.0
    augment: bool = False

    def __post_init__(self):
        if self.total_iterations < 0:
            raise ConfigError("total_iterations must be non-negative")
        if self.phase1_iterations is not None and not 0 <= self.phase1_iterations <= self.total_iterations:
            raise ConfigError("phase1_iterations must lie in [0, total_iterations]")
        if self.lr_generator < 0 or self.lr_other < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.batch_size < 1 or self.d_steps_per_g_step < 1:
            raise ConfigError("batch_size and d_steps_per_g_step must be positive")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError("ema_decay must lie in [0, 1)")

    @property
    def phase1(self) -> int:
        if self.phase1_iterations is None:
            return self.total_iterations // 10
        return self.phase1_iterations


# -- flat key/value (de)serialisation -------------------------------------------------

def to_flat(cfg) -> dict[str, str]:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = _format_value(v)
    return out


def _format_value(v: Any) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    if isinstance(v, dict):
        return ",".join(f"{k}:{v[k]!r}" for k in sorted(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_bool(s: str) -> bool:
    s = s.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _parse_value(type_str: str, raw: str):
    raw = raw.strip()
    optional = "None" in type_str
    if optional and raw.lower() in ("none", ""):
        return None
    if type_str.startswith("bool"):
        return _parse_bool(raw)
    if type_str.startswith("int"):
        return int(raw)
    if type_str.startswith("float"):
        return float(raw)
    if type_str.startswith("tuple"):
        return tuple(int(x) for x in raw.split(",") if x.strip())
    if type_str.startswith("dict"):
        out = {}
        for item in raw.split(","):
            if item.strip():
                k, v = item.split(":")
                out[int(k)] = float(v)
        return out
    return raw


def from_flat(cls, values: dict[str, str]):
    """Build dataclass ``cls`` from string values; unknown keys raise ConfigError."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        if key not in fields:
            raise ConfigError(f"unknown {cls.__name__} key {key!r}; valid keys: {sorted(fields)}")
        try:
            kwargs[key] = _parse_value(str(fields[key].type), raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from None
    return cls(**kwargs)
