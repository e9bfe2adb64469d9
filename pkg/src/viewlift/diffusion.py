"""Toy latent diffusion core: noise schedule, VAE, conditional UNet noise
predictor with cross-attention conditioning and LoRA adapters, DDIM sampling.

Step indices are zero based with ``alpha_bar[0]`` closest to 1 (least noisy).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .blocks import (
    FeedForward,
    MultiHeadAttention,
    ResBlock,
    TimeEmbedding,
    feature_map_to_tokens,
    tokens_to_feature_map,
)


@dataclass(frozen=True)
class NoiseSchedule:
    """Forward-diffusion tables beta_t, alpha_t and alpha_bar_t (float64)."""

    betas: torch.Tensor
    alphas: torch.Tensor
    alpha_bars: torch.Tensor

    @property
    def T(self) -> int:
        return self.betas.shape[0]


def make_schedule(T: int, beta_start: float = 1e-3, beta_end: float = 0.2) -> NoiseSchedule:
    """Linear-beta schedule with derived alpha tables."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=torch.cumprod(alphas, dim=0))


def _alpha_bar(schedule: NoiseSchedule, t) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=torch.long)
    if torch.any(t < 0) or torch.any(t >= schedule.T):
        raise ValueError(f"step index out of range [0, {schedule.T})")
    return schedule.alpha_bars[t]


def forward_diffuse(x0: torch.Tensor, t, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps."""
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} != x0 shape {tuple(x0.shape)}")
    ab = _alpha_bar(schedule, t).to(x0.dtype)
    while ab.ndim < x0.ndim:
        ab = ab.unsqueeze(-1)
    return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps


def sd_loss(eps: torch.Tensor, eps_hat: torch.Tensor) -> torch.Tensor:
    """Mean squared error over every element (and the batch)."""
    if eps.shape != eps_hat.shape:
        raise ValueError(f"shape mismatch {tuple(eps.shape)} vs {tuple(eps_hat.shape)}")
    return torch.mean((eps - eps_hat) ** 2)


def ddim_timesteps(T: int, steps: int) -> np.ndarray:
    """Strictly decreasing subsequence of length ``steps`` ending at 0-adjacent."""
    if steps < 1 or steps > T:
        raise ValueError(f"steps must be in [1, {T}], got {steps}")
    return (np.arange(steps, 0, -1) * T) // steps - 1


def ddim_step(x_t: torch.Tensor, t: int, t_next: int | None, eps_hat: torch.Tensor, schedule: NoiseSchedule):
    """One deterministic (eta=0) DDIM update; ``t_next=None`` jumps to the
    clean prediction (alpha_bar = 1). Returns ``(x_next, x0_pred)``."""
    ab_t = float(_alpha_bar(schedule, t))
    ab_n = 1.0 if t_next is None else float(_alpha_bar(schedule, t_next))
    x0_pred = (x_t - (1.0 - ab_t) ** 0.5 * eps_hat) / ab_t**0.5
    x_next = ab_n**0.5 * x0_pred + (1.0 - ab_n) ** 0.5 * eps_hat
    return x_next, x0_pred


def ddim_sample(eps_model, cond_fn, schedule: NoiseSchedule, steps: int, shape, seed: int) -> torch.Tensor:
    """Deterministic DDIM sampler.

    ``eps_model(x, t, cond)`` predicts noise; ``cond_fn(t)`` supplies the
    conditioning at each visited step (features are time-aware, so they are
    re-evaluated per step). The initial state is a seeded unit Gaussian and
    the return value is the final clean prediction.
    """
    ts = ddim_timesteps(schedule.T, steps)
    rng = np.random.default_rng(seed)
    x = torch.from_numpy(rng.standard_normal(shape).astype(np.float32))
    for i, t in enumerate(ts):
        t = int(t)
        eps_hat = eps_model(x, t, cond_fn(t))
        t_next = int(ts[i + 1]) if i + 1 < len(ts) else None
        x, x0_pred = ddim_step(x, t, t_next, eps_hat, schedule)
    return x0_pred


@dataclass(frozen=True)
class VAEConfig:
    image_size: int = 64
    latent_channels: int = 4
    base_channels: int = 32

    @property
    def latent_size(self) -> int:
        return self.image_size // 4


class ToyVAE(nn.Module):
    """Small conv VAE with a x4 spatial downscale; eval paths use the mean
    latent so encode/decode are deterministic."""

    def __init__(self, cfg: VAEConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or VAEConfig()
        b, lc = cfg.base_channels, cfg.latent_channels
        act = nn.SiLU
        self.enc = nn.Sequential(
            nn.Conv2d(3, b, 3, padding=1), act(),
            nn.Conv2d(b, 2 * b, 3, stride=2, padding=1), act(),
            nn.Conv2d(2 * b, 2 * b, 3, padding=1), act(),
            nn.Conv2d(2 * b, 4 * b, 3, stride=2, padding=1), act(),
            nn.Conv2d(4 * b, 4 * b, 3, padding=1), act(),
            nn.Conv2d(4 * b, 2 * lc, 1),
        )
        self.dec = nn.Sequential(
            nn.Conv2d(lc, 4 * b, 3, padding=1), act(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(4 * b, 2 * b, 3, padding=1), act(),
            nn.Conv2d(2 * b, 2 * b, 3, padding=1), act(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * b, b, 3, padding=1), act(),
            nn.Conv2d(b, 3, 3, padding=1),
        )
        self.register_buffer("latent_scale", torch.tensor(1.0))

    def _check(self, images: torch.Tensor):
        s = self.cfg.image_size
        if images.ndim != 4 or images.shape[1] != 3 or images.shape[2] != s or images.shape[3] != s:
            raise ValueError(f"expected images (B, 3, {s}, {s}), got {tuple(images.shape)}")

    def encode(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        self._check(images)
        mu, logvar = self.enc(images * 2.0 - 1.0).chunk(2, dim=1)
        return mu, logvar.clamp(-30.0, 20.0)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.dec(z))

    def encode_latent(self, images: torch.Tensor, eps: torch.Tensor | None = None) -> torch.Tensor:
        """Scaled latent; pass ``eps`` to draw a reparameterized sample."""
        mu, logvar = self.encode(images)
        z = mu if eps is None else mu + torch.exp(0.5 * logvar) * eps
        return z * self.latent_scale

    def decode_latent(self, z: torch.Tensor) -> torch.Tensor:
        return self.decode(z / self.latent_scale)

    @staticmethod
    def kl(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
        return -0.5 * torch.mean(1.0 + logvar - mu**2 - torch.exp(logvar))


@dataclass(frozen=True)
class UNetConfig:
    latent_channels: int = 4
    latent_size: int = 16
    base_channels: int = 64
    channel_multipliers: tuple[int, ...] = (1, 2)
    time_dim: int = 128
    cond_channels: int = 128
    cond_tokens: int = 64
    n_heads: int = 4
    lora_rank: int = 16
    total_steps: int = 100


class UNetAttnBlock(nn.Module):
    """Self-attention + cross-attention + feed-forward over a feature map.

    LoRA covers the self-attention and feed-forward linears; the
    cross-attention projections are kept plain so they form their own fully
    trainable parameter group.
    """

    def __init__(self, width: int, cond_dim: int, n_heads: int, lora_rank: int | None):
        super().__init__()
        self.ln_self = nn.LayerNorm(width)
        self.self_attn = MultiHeadAttention(width, n_heads, lora_rank=lora_rank)
        self.ln_cross = nn.LayerNorm(width)
        self.cross_attn = MultiHeadAttention(width, n_heads, kv_dim=cond_dim, lora_rank=None)
        self.ln_ff = nn.LayerNorm(width)
        self.ff = FeedForward(width, mult=2, lora_rank=lora_rank)

    def forward(self, x: torch.Tensor, kv: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[2], x.shape[3]
        tok = feature_map_to_tokens(x)
        tok = tok + self.self_attn(self.ln_self(tok))
        tok = tok + self.cross_attn(self.ln_cross(tok), kv)
        tok = tok + self.ff(self.ln_ff(tok))
        return tokens_to_feature_map(tok, h, w)


class CondUNet(nn.Module):
    """Two-resolution UNet noise predictor conditioned on spatial feature
    tokens through cross-attention at every resolution."""

    def __init__(self, cfg: UNetConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or UNetConfig()
        r = cfg.lora_rank
        widths = [cfg.base_channels * m for m in cfg.channel_multipliers]
        self.widths = widths
        self.time_embed = TimeEmbedding(cfg.time_dim, lora_rank=r)
        self.cond_pos = nn.Parameter(torch.randn(cfg.cond_tokens, cfg.cond_channels) * 0.02)
        self.in_conv = nn.Conv2d(cfg.latent_channels, widths[0], 3, padding=1)

        self.down_res = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.downs = nn.ModuleList()
        ch = widths[0]
        for i, w in enumerate(widths):
            self.down_res.append(ResBlock(ch, w, time_dim=cfg.time_dim, lora_rank=r))
            self.down_attn.append(UNetAttnBlock(w, cfg.cond_channels, cfg.n_heads, r))
            ch = w
            if i < len(widths) - 1:
                self.downs.append(nn.Conv2d(w, w, 3, stride=2, padding=1))

        top = widths[-1]
        self.mid_res1 = ResBlock(top, top, time_dim=cfg.time_dim, lora_rank=r)
        self.mid_attn = UNetAttnBlock(top, cfg.cond_channels, cfg.n_heads, r)
        self.mid_res2 = ResBlock(top, top, time_dim=cfg.time_dim, lora_rank=r)

        self.up_res = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        self.ups = nn.ModuleList()
        for i in reversed(range(len(widths))):
            in_ch = widths[i] + (widths[i + 1] if i + 1 < len(widths) else widths[i])
            self.up_res.append(ResBlock(in_ch, widths[i], time_dim=cfg.time_dim, lora_rank=r))
            self.up_attn.append(UNetAttnBlock(widths[i], cfg.cond_channels, cfg.n_heads, r))
            if i > 0:
                self.ups.append(
                    nn.Sequential(
                        nn.Upsample(scale_factor=2, mode="nearest"),
                        nn.Conv2d(widths[i], widths[i], 3, padding=1),
                    )
                )
        self.out_norm = nn.GroupNorm(8 if widths[0] % 8 == 0 else 1, widths[0])
        self.out_conv = nn.Conv2d(widths[0], cfg.latent_channels, 3, padding=1)
        self.act = nn.SiLU()

    def forward(self, x: torch.Tensor, t, cond: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != cfg.latent_channels:
            raise ValueError(f"expected latents (B, {cfg.latent_channels}, h, w), got {tuple(x.shape)}")
        if cond.ndim != 3 or cond.shape[1] != cfg.cond_tokens or cond.shape[2] != cfg.cond_channels:
            raise ValueError(
                f"expected cond tokens (B, {cfg.cond_tokens}, {cfg.cond_channels}), got {tuple(cond.shape)}"
            )
        t = torch.as_tensor(t, dtype=torch.long).reshape(-1)
        if t.numel() == 1 and x.shape[0] > 1:
            t = t.expand(x.shape[0])
        if torch.any(t < 0) or torch.any(t >= cfg.total_steps):
            raise ValueError(f"step index out of range [0, {cfg.total_steps})")
        t_emb = self.time_embed(t)
        kv = cond + self.cond_pos.to(cond.dtype)

        h = self.in_conv(x)
        skips = []
        for i in range(len(self.widths)):
            h = self.down_res[i](h, t_emb)
            h = self.down_attn[i](h, kv)
            skips.append(h)
            if i < len(self.widths) - 1:
                h = self.downs[i](h)

        h = self.mid_res1(h, t_emb)
        h = self.mid_attn(h, kv)
        h = self.mid_res2(h, t_emb)

        for j, i in enumerate(reversed(range(len(self.widths)))):
            h = torch.cat([h, skips[i]], dim=1)
            h = self.up_res[j](h, t_emb)
            h = self.up_attn[j](h, kv)
            if i > 0:
                h = self.ups[j](h)
        return self.out_conv(self.act(self.out_norm(h)))

    @staticmethod
    def classify_param(name: str) -> str:
        """Checkpoint group for a UNet parameter name."""
        if ".lora_a" in name or ".lora_b" in name:
            return "unet_lora"
        if "cross_attn" in name or "cond_pos" in name:
            return "cross_attn"
        return "unet_base"
