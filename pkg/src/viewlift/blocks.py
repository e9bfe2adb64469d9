"""Shared neural building blocks: time embeddings, attention, LoRA adapters,
camera-modulated layer normalization, and conv residual blocks."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

LAYERNORM_EPS = 1e-5


def sinusoidal_time_embedding(t, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Fixed sin/cos embedding of diffusion steps, first half sin, second cos.

    ``t`` may be an int or a 1-D tensor of steps; the result has shape
    ``(dim,)`` or ``(len(t), dim)`` respectively.
    """
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    scalar = not torch.is_tensor(t) or t.ndim == 0
    steps = torch.as_tensor(t, dtype=torch.float64).reshape(-1)
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = steps[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1).to(torch.float32)
    return emb[0] if scalar else emb


class TimeEmbedding(nn.Module):
    """Sinusoidal step embedding followed by a learned 2-layer projection."""

    def __init__(self, dim: int, out_dim: int | None = None, lora_rank: int | None = None):
        super().__init__()
        out_dim = out_dim or dim
        self.dim = dim
        self.mlp = nn.Sequential(
            make_linear(dim, out_dim, lora_rank=lora_rank),
            nn.SiLU(),
            make_linear(out_dim, out_dim, lora_rank=lora_rank),
        )

    def forward(self, t) -> torch.Tensor:
        emb = sinusoidal_time_embedding(t, self.dim)
        p = next(self.mlp.parameters())
        return self.mlp(emb.to(device=p.device, dtype=p.dtype))


class LoRALinear(nn.Module):
    """Linear layer with a low-rank additive adapter ``x A B / r``.

    ``lora_b`` starts at zero so a fresh adapter leaves the base function
    bit-identical; the base weight can be frozen independently of A/B.
    """

    def __init__(self, in_features: int, out_features: int, rank: int = 16, bias: bool = True):
        super().__init__()
        if rank < 1:
            raise ValueError("rank must be >= 1")
        self.base = nn.Linear(in_features, out_features, bias=bias)
        self.rank = rank
        self.scale = 1.0 / rank
        self.lora_a = nn.Parameter(torch.randn(in_features, rank) * 0.02)
        self.lora_b = nn.Parameter(torch.zeros(rank, out_features))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + (x @ self.lora_a) @ self.lora_b * self.scale


def make_linear(in_features: int, out_features: int, bias: bool = True, lora_rank: int | None = None):
    if lora_rank is None:
        return nn.Linear(in_features, out_features, bias=bias)
    return LoRALinear(in_features, out_features, rank=lora_rank, bias=bias)


def lora_linear(x: torch.Tensor, w_frozen: torch.Tensor, a: torch.Tensor, b: torch.Tensor, scale: float = 1.0) -> torch.Tensor:
    """Functional adapter form ``x W + scale (x A) B`` over a frozen base weight."""
    return x @ w_frozen + (x @ a) @ b * scale


def mod_ln(f: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor, t_proj: torch.Tensor, eps: float = LAYERNORM_EPS) -> torch.Tensor:
    """Camera/time modulated layer norm over the channel (last) axis:
    ``LayerNorm(f) * (1 + gamma) + beta + t_proj``."""
    if f.shape[-1] != gamma.shape[-1] or f.shape[-1] != beta.shape[-1]:
        raise ValueError("gamma/beta width must match the channel axis")
    mean = f.mean(dim=-1, keepdim=True)
    var = f.var(dim=-1, keepdim=True, unbiased=False)
    normed = (f - mean) / torch.sqrt(var + eps)
    return normed * (1.0 + gamma) + beta + t_proj


class ModLN(nn.Module):
    """Time-aware camera modulation: (gamma, beta) come from a 2-layer MLP on
    the camera vector, plus a projected additive time term.

    Modulation MLP and time projection are zero-initialized at the output so a
    fresh block is a plain LayerNorm.
    """

    def __init__(self, channels: int, cam_dim: int = 25, time_dim: int | None = None):
        super().__init__()
        time_dim = time_dim or channels
        self.channels = channels
        self.cam_mlp = nn.Sequential(
            nn.Linear(cam_dim, channels),
            nn.SiLU(),
            nn.Linear(channels, 2 * channels),
        )
        self.time_proj = nn.Linear(time_dim, channels)
        nn.init.zeros_(self.cam_mlp[-1].weight)
        nn.init.zeros_(self.cam_mlp[-1].bias)
        nn.init.zeros_(self.time_proj.weight)
        nn.init.zeros_(self.time_proj.bias)

    def forward(self, f: torch.Tensor, cam_vec: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        gamma, beta = self.cam_mlp(cam_vec).chunk(2, dim=-1)
        t_proj = self.time_proj(t_emb)
        while gamma.ndim < f.ndim:
            gamma, beta, t_proj = gamma.unsqueeze(-2), beta.unsqueeze(-2), t_proj.unsqueeze(-2)
        return mod_ln(f, gamma, beta, t_proj)


def scaled_dot_product_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, n_heads: int, return_weights: bool = False):
    """Multi-head attention over already-projected tokens of shape (B, N, C)."""
    b, nq, c = q.shape
    nk = k.shape[1]
    if c % n_heads != 0:
        raise ValueError(f"token width {c} not divisible by {n_heads} heads")
    hd = c // n_heads

    def split(x, n):
        return x.reshape(b, n, n_heads, hd).transpose(1, 2)

    qh, kh, vh = split(q, nq), split(k, nk), split(v, nk)
    logits = qh @ kh.transpose(-1, -2) / math.sqrt(hd)
    weights = torch.softmax(logits, dim=-1)
    out = (weights @ vh).transpose(1, 2).reshape(b, nq, c)
    if return_weights:
        return out, weights
    return out


class MultiHeadAttention(nn.Module):
    """Projected multi-head attention; cross-attention when ``kv`` differs
    from the query stream, self-attention otherwise."""

    def __init__(self, dim: int, n_heads: int, kv_dim: int | None = None, lora_rank: int | None = None):
        super().__init__()
        kv_dim = kv_dim or dim
        self.n_heads = n_heads
        self.to_q = make_linear(dim, dim, bias=False, lora_rank=lora_rank)
        self.to_k = make_linear(kv_dim, dim, bias=False, lora_rank=lora_rank)
        self.to_v = make_linear(kv_dim, dim, bias=False, lora_rank=lora_rank)
        self.to_out = make_linear(dim, dim, lora_rank=lora_rank)

    def forward(self, q_tokens: torch.Tensor, kv_tokens: torch.Tensor | None = None) -> torch.Tensor:
        kv = q_tokens if kv_tokens is None else kv_tokens
        out = scaled_dot_product_attention(
            self.to_q(q_tokens), self.to_k(kv), self.to_v(kv), self.n_heads
        )
        return self.to_out(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, mult: int = 4, lora_rank: int | None = None):
        super().__init__()
        self.net = nn.Sequential(
            make_linear(dim, dim * mult, lora_rank=lora_rank),
            nn.GELU(),
            make_linear(dim * mult, dim, lora_rank=lora_rank),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


def _norm_groups(channels: int) -> int:
    return 8 if channels % 8 == 0 else 1

class ResBlock(nn.Module):
    """GroupNorm/SiLU/conv residual block with additive time conditioning
    injected after the first convolution."""

    def __init__(self, in_ch: int, out_ch: int, time_dim: int | None = None, lora_rank: int | None = None):
        super().__init__()
        self.norm1 = nn.GroupNorm(_norm_groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(_norm_groups(out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.act = nn.SiLU()
        self.time_proj = None
        if time_dim is not None:
            self.time_proj = make_linear(time_dim, out_ch, lora_rank=lora_rank)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor | None = None) -> torch.Tensor:
        h = self.conv1(self.act(self.norm1(x)))
        if self.time_proj is not None:
            if t_emb is None:
                raise ValueError("this block expects a time embedding")
            h = h + self.time_proj(t_emb)[:, :, None, None]
        h = self.conv2(self.act(self.norm2(h)))
        return h + self.skip(x)


def feature_map_to_tokens(x: torch.Tensor) -> torch.Tensor:
    """(B, C, H, W) -> (B, H*W, C)."""
    b, c, h, w = x.shape
    return x.reshape(b, c, h * w).transpose(1, 2)


def tokens_to_feature_map(tokens: torch.Tensor, h: int, w: int) -> torch.Tensor:
    """(B, H*W, C) -> (B, C, H, W)."""
    b, n, c = tokens.shape
    if n != h * w:
        raise ValueError(f"token count {n} does not match {h}x{w}")
    return tokens.transpose(1, 2).reshape(b, c, h, w)
