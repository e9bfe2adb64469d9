"""Hierarchical run configuration (data/model/train/eval/infer sections)
loaded from JSON, with strict unknown-key rejection and dotted overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import get_type_hints

from .diffusion import UNetConfig, VAEConfig
from .encoder import EncoderConfig
from .losses import LossWeights
from .viewsynth import ViewSynthConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    encoder_base: int = 32
    encoder_multipliers: tuple[int, ...] = (1, 2, 4)
    encoder_blocks: int = 2
    feature_channels: int = 128
    time_dim: int = 128
    latent_channels: int = 4
    vae_base: int = 32
    unet_base: int = 64
    unet_multipliers: tuple[int, ...] = (1, 2)
    n_heads: int = 4
    lora_rank: int = 16
    volume_grid: tuple[int, int, int] = (8, 8, 8)
    volume_blocks: int = 4
    aggregator_pairs: int = 2
    depth_samples: int = 12
    near: float = 0.5
    far: float = 3.5
    bound: float = 1.0
    campred_hidden: int = 256
    total_steps: int = 100
    beta_start: float = 1e-3
    beta_end: float = 0.2

    @property
    def feature_size(self) -> int:
        return self.image_size // 2 ** len(self.encoder_multipliers)

    @property
    def latent_size(self) -> int:
        return self.image_size // 4

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            image_size=self.image_size,
            base_channels=self.encoder_base,
            channel_multipliers=tuple(self.encoder_multipliers),
            out_channels=self.feature_channels,
            time_dim=self.time_dim,
            num_res_blocks=self.encoder_blocks,
            total_steps=self.total_steps,
        )

    def vae_config(self) -> VAEConfig:
        return VAEConfig(
            image_size=self.image_size,
            latent_channels=self.latent_channels,
            base_channels=self.vae_base,
        )

    def unet_config(self) -> UNetConfig:
        return UNetConfig(
            latent_channels=self.latent_channels,
            latent_size=self.latent_size,
            base_channels=self.unet_base,
            channel_multipliers=tuple(self.unet_multipliers),
            time_dim=self.time_dim,
            cond_channels=self.feature_channels,
            cond_tokens=self.feature_size**2,
            n_heads=self.n_heads,
            lora_rank=self.lora_rank,
            total_steps=self.total_steps,
        )

    def viewsynth_config(self) -> ViewSynthConfig:
        return ViewSynthConfig(
            feature_channels=self.feature_channels,
            feature_size=self.feature_size,
            volume_grid=tuple(self.volume_grid),
            volume_blocks=self.volume_blocks,
            aggregator_pairs=self.aggregator_pairs,
            n_heads=self.n_heads,
            time_dim=self.time_dim,
            depth_samples=self.depth_samples,
            near=self.near,
            far=self.far,
            bound=self.bound,
            campred_hidden=self.campred_hidden,
            total_steps=self.total_steps,
        )


@dataclass(frozen=True)
class WeightsConfig:
    lambda_cos: float = 2.0
    lambda_feat: float = 10.0
    lambda_cam: float = 0.05

    def to_loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_cos, self.lambda_feat, self.lambda_cam)


@dataclass(frozen=True)
class Step1Config:
    iterations: int = 5000
    lr: float = 5e-5
    batch_size: int = 8
    vae_pretrain_iters: int = 2000
    vae_lr: float = 1e-3
    vae_weight: float = 1.0
    kl_weight: float = 1e-6


@dataclass(frozen=True)
class Step2Config:
    iterations: int = 8000
    lr: float = 1e-4
    batch_size: int = 2
    n_targets: int = 7


@dataclass(frozen=True)
class TrainSection:
    seed: int = 0
    degradation: str = "level1"
    eval_interval: int = 1000
    eval_scenes: int = 6
    checkpoint_interval: int = 500
    ddim_steps: int = 50
    weights: WeightsConfig = field(default_factory=WeightsConfig)
    step1: Step1Config = field(default_factory=Step1Config)
    step2: Step2Config = field(default_factory=Step2Config)


@dataclass(frozen=True)
class DataSection:
    n_scenes: int = 60
    views: int = 8
    image_size: int = 64
    seed: int = 0
    val_scenes: int | None = None


@dataclass(frozen=True)
class EvalSection:
    split: str = "val"
    ddim_steps: int = 50
    seed: int = 0
    max_scenes: int | None = None


@dataclass(frozen=True)
class InferSection:
    ddim_steps: int = 50
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    infer: InferSection = field(default_factory=InferSection)


def _build(cls, data, path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"section {path or '<root>'} must be a JSON object")
    hints = get_type_hints(cls)
    valid = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in valid:
            raise ConfigError(f"unknown config key {path + key!r}")
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            value = _build(hint, value, path + key + ".")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid config section {path or '<root>'}: {e}") from e


def config_from_dict(data: dict | None) -> RunConfig:
    return _build(RunConfig, data or {})


def config_from_file(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return config_from_dict(data)


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``section.key=value`` overrides; values are parsed as JSON with a
    bare-string fallback."""
    data = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key.path=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = dotted.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config key {dotted!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        node[parts[-1]] = value
    return config_from_dict(data)


def config_hash(cfg) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def write_effective_config(cfg: RunConfig, out_dir: str | Path):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.json").write_text(json.dumps(config_to_dict(cfg), indent=1, sort_keys=True))
