"""Time-aware image encoder producing unpooled spatial reference features."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .blocks import ResBlock, TimeEmbedding, feature_map_to_tokens


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 64
    base_channels: int = 32
    channel_multipliers: tuple[int, ...] = (1, 2, 4)
    out_channels: int = 128
    time_dim: int = 128
    num_res_blocks: int = 2
    total_steps: int = 100

    @property
    def feature_size(self) -> int:
        return self.image_size // 2 ** len(self.channel_multipliers)

    def __post_init__(self):
        if self.image_size % 2 ** len(self.channel_multipliers) != 0:
            raise ValueError("image_size must be divisible by 2**stages")


# Reference full-scale configuration: 512x512x3 in, 8x8x1024 out.
FULL_SCALE_ENCODER = EncoderConfig(
    image_size=512,
    base_channels=64,
    channel_multipliers=(1, 2, 4, 4, 8, 16),
    out_channels=1024,
    time_dim=512,
    num_res_blocks=2,
    total_steps=100,
)


@dataclass
class ReferenceFeature:
    """Spatial feature map (B, C, H_f, W_f) synchronized with diffusion step t."""

    values: torch.Tensor
    t: torch.Tensor

    def __post_init__(self):
        if self.values.ndim != 4:
            raise ValueError(f"values must be (B, C, H, W), got {tuple(self.values.shape)}")
        self.t = torch.as_tensor(self.t, dtype=torch.long).reshape(-1)
        if self.t.shape[0] != self.values.shape[0]:
            raise ValueError("one step index per batch item required")

    def tokens(self) -> torch.Tensor:
        return feature_map_to_tokens(self.values)


class TimeAwareEncoder(nn.Module):
    """Downsampling residual encoder; every block receives the step embedding.

    The final stage keeps the spatial map (no pooling) so the downstream
    cross-attention sees one token per feature cell.
    """

    def __init__(self, cfg: EncoderConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or EncoderConfig()
        self.time_embed = TimeEmbedding(cfg.time_dim)
        widths = [cfg.base_channels * m for m in cfg.channel_multipliers]
        self.stem = nn.Conv2d(3, widths[0], 3, padding=1)
        stages = []
        ch = widths[0]
        for width in widths:
            blocks = []
            for _ in range(cfg.num_res_blocks):
                blocks.append(ResBlock(ch, width, time_dim=cfg.time_dim))
                ch = width
            stages.append(nn.ModuleList(blocks))
        self.stages = nn.ModuleList(stages)
        self.downsamples = nn.ModuleList(
            nn.Conv2d(w, w, 3, stride=2, padding=1) for w in widths
        )
        self.out_norm = nn.GroupNorm(8 if ch % 8 == 0 else 1, ch)
        self.out_conv = nn.Conv2d(ch, cfg.out_channels, 1)
        self.act = nn.SiLU()

    def forward(self, images: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        if images.ndim != 4 or images.shape[1] != 3 or images.shape[2] != cfg.image_size or images.shape[3] != cfg.image_size:
            raise ValueError(
                f"expected images (B, 3, {cfg.image_size}, {cfg.image_size}), got {tuple(images.shape)}"
            )
        t = torch.as_tensor(t, dtype=torch.long).reshape(-1)
        if torch.any(t < 0) or torch.any(t >= cfg.total_steps):
            raise ValueError(f"step index out of range [0, {cfg.total_steps})")
        t_emb = self.time_embed(t)
        x = self.stem(images * 2.0 - 1.0)
        for blocks, down in zip(self.stages, self.downsamples):
            for block in blocks:
                x = block(x, t_emb)
            x = down(x)
        return self.out_conv(self.act(self.out_norm(x)))

    def encode(self, images: torch.Tensor, t) -> ReferenceFeature:
        t = torch.as_tensor(t, dtype=torch.long).reshape(-1)
        if t.numel() == 1 and images.shape[0] > 1:
            t = t.expand(images.shape[0])
        return ReferenceFeature(values=self.forward(images, t), t=t)
