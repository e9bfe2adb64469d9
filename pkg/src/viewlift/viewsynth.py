"""View synthesis stack: camera predictor, camera-modulated volume
construction transformer, depth aggregation transformer, and depth pooling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .blocks import FeedForward, ModLN, MultiHeadAttention, TimeEmbedding, feature_map_to_tokens
from .geometry import CameraParams, FrustumGrid, VolumeGrid, default_bounds, warp_volume


@dataclass(frozen=True)
class ViewSynthConfig:
    feature_channels: int = 128
    feature_size: int = 8
    volume_grid: tuple[int, int, int] = (8, 8, 8)
    volume_blocks: int = 4
    aggregator_pairs: int = 2
    n_heads: int = 4
    time_dim: int = 128
    cam_dim: int = 25
    depth_samples: int = 12
    near: float = 0.5
    far: float = 3.5
    bound: float = 1.0
    campred_hidden: int = 256
    total_steps: int = 100

    @property
    def volume_tokens(self) -> int:
        d, h, w = self.volume_grid
        return d * h * w


class CameraPredictor(nn.Module):
    """Global-average-pooled features -> 2-layer MLP -> 25-vector."""

    def __init__(self, cfg: ViewSynthConfig | None = None):
        super().__init__()
        cfg = cfg or ViewSynthConfig()
        self.net = nn.Sequential(
            nn.Linear(cfg.feature_channels, cfg.campred_hidden),
            nn.SiLU(),
            nn.Linear(cfg.campred_hidden, cfg.cam_dim),
        )

    def forward(self, feat: torch.Tensor) -> torch.Tensor:
        if feat.ndim != 4:
            raise ValueError(f"expected (B, C, H, W), got {tuple(feat.shape)}")
        return self.net(feat.mean(dim=(2, 3)))


class PositionalVolume(nn.Module):
    """Learned spatial query tokens, one per voxel of the latent grid."""

    def __init__(self, cfg: ViewSynthConfig | None = None):
        super().__init__()
        cfg = cfg or ViewSynthConfig()
        c = cfg.feature_channels
        self.tokens = nn.Parameter(torch.randn(cfg.volume_tokens, c) / c**0.5)

    def forward(self, batch: int = 1) -> torch.Tensor:
        return self.tokens.unsqueeze(0).expand(batch, -1, -1)


class ConstructorBlock(nn.Module):
    """ModLN -> self-attention -> ModLN -> cross-attention -> ModLN -> FF,
    with a residual connection around each sublayer."""

    def __init__(self, cfg: ViewSynthConfig):
        super().__init__()
        c = cfg.feature_channels
        self.mod_self = ModLN(c, cfg.cam_dim, cfg.time_dim)
        self.self_attn = MultiHeadAttention(c, cfg.n_heads)
        self.mod_cross = ModLN(c, cfg.cam_dim, cfg.time_dim)
        self.cross_attn = MultiHeadAttention(c, cfg.n_heads)
        self.mod_ff = ModLN(c, cfg.cam_dim, cfg.time_dim)
        self.ff = FeedForward(c, mult=2)

    def forward(self, x, ref_tokens, cam_vec, t_emb):
        x = x + self.self_attn(self.mod_self(x, cam_vec, t_emb))
        x = x + self.cross_attn(self.mod_cross(x, cam_vec, t_emb), ref_tokens)
        x = x + self.ff(self.mod_ff(x, cam_vec, t_emb))
        return x


class VolumeConstructor(nn.Module):
    """Transformer that turns query tokens plus reference features into a
    latent 3D feature volume, modulated by the input camera and step."""

    def __init__(self, cfg: ViewSynthConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or ViewSynthConfig()
        c = cfg.feature_channels
        self.time_embed = TimeEmbedding(cfg.time_dim)
        self.ref_pos = nn.Parameter(torch.randn(cfg.feature_size**2, c) * 0.02)
        self.blocks = nn.ModuleList(ConstructorBlock(cfg) for _ in range(cfg.volume_blocks))
        self.out_norm = nn.LayerNorm(c)

    def forward(self, v_tokens: torch.Tensor, feat: torch.Tensor, cam_vec: torch.Tensor, t) -> torch.Tensor:
        """(B, N_vox, C) query tokens -> (B, N_vox, C) volume tokens."""
        cfg = self.cfg
        if v_tokens.ndim != 3 or v_tokens.shape[1] != cfg.volume_tokens:
            raise ValueError(f"expected (B, {cfg.volume_tokens}, C) query tokens, got {tuple(v_tokens.shape)}")
        if feat.shape[1] != cfg.feature_channels or feat.shape[2] * feat.shape[3] != cfg.feature_size**2:
            raise ValueError(f"reference feature shape {tuple(feat.shape)} does not match config")
        t = torch.as_tensor(t, dtype=torch.long).reshape(-1)
        if torch.any(t < 0) or torch.any(t >= cfg.total_steps):
            raise ValueError(f"step index out of range [0, {cfg.total_steps})")
        t_emb = self.time_embed(t)
        ref_tokens = feature_map_to_tokens(feat) + self.ref_pos
        x = v_tokens
        for block in self.blocks:
            x = block(x, ref_tokens, cam_vec, t_emb)
        return self.out_norm(x)

    def to_volume_grid(self, volume_tokens: torch.Tensor) -> VolumeGrid:
        """Reshape one sample's tokens onto the canonical world cube."""
        cfg = self.cfg
        d, h, w = cfg.volume_grid
        values = volume_tokens.reshape(d, h, w, cfg.feature_channels)
        return VolumeGrid(values=values, bounds=default_bounds(cfg.bound))


class TokenBlock(nn.Module):
    """Pre-LN self-attention + feed-forward over (B, N, C) tokens."""

    def __init__(self, c: int, n_heads: int):
        super().__init__()
        self.ln_attn = nn.LayerNorm(c)
        self.attn = MultiHeadAttention(c, n_heads)
        self.ln_ff = nn.LayerNorm(c)
        self.ff = FeedForward(c, mult=2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln_attn(x))
        return x + self.ff(self.ln_ff(x))


class DepthAggregator(nn.Module):
    """Alternating cross-depth / spatial attention over frustum features.

    Cross-depth blocks attend over the depth tokens of each spatial cell;
    spatial blocks attend over the H*W cells of each depth slice. Learned
    positional embeddings keep depth order and cell identity distinguishable.
    """

    def __init__(self, cfg: ViewSynthConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or ViewSynthConfig()
        c = cfg.feature_channels
        self.depth_pos = nn.Parameter(torch.randn(cfg.depth_samples, c) * 0.02)
        self.space_pos = nn.Parameter(torch.randn(cfg.feature_size**2, c) * 0.02)
        self.depth_blocks = nn.ModuleList(TokenBlock(c, cfg.n_heads) for _ in range(cfg.aggregator_pairs))
        self.space_blocks = nn.ModuleList(TokenBlock(c, cfg.n_heads) for _ in range(cfg.aggregator_pairs))

    def forward(self, values: torch.Tensor) -> torch.Tensor:
        """(D_f, H, W, C) -> (D_f, H, W, C)."""
        if values.ndim != 4:
            raise ValueError(f"expected (D_f, H, W, C), got {tuple(values.shape)}")
        d, h, w, c = values.shape
        s = h * w
        x = values.reshape(d, s, c)
        x = x + self.depth_pos[: d, None, :] + self.space_pos[None, :s, :]
        for depth_block, space_block in zip(self.depth_blocks, self.space_blocks):
            x = depth_block(x.transpose(0, 1)).transpose(0, 1)
            x = space_block(x)
        return x.reshape(d, h, w, c)


def pool_depth(frustum: FrustumGrid | torch.Tensor) -> torch.Tensor:
    """Average over the depth axis: (D_f, H, W, C) -> (H, W, C)."""
    values = frustum.values if isinstance(frustum, FrustumGrid) else frustum
    return values.mean(dim=0)


class ViewSynthesizer(nn.Module):
    """Full step-2 stack turning one reference feature map into feature maps
    for arbitrary target cameras."""

    def __init__(self, cfg: ViewSynthConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or ViewSynthConfig()
        self.camera_predictor = CameraPredictor(cfg)
        self.positional_volume = PositionalVolume(cfg)
        self.constructor = VolumeConstructor(cfg)
        self.aggregator = DepthAggregator(cfg)

    def predict_camera(self, feat: torch.Tensor) -> torch.Tensor:
        return self.camera_predictor(feat)

    def construct_volume(self, feat: torch.Tensor, cam_vec: torch.Tensor, t) -> VolumeGrid:
        """Build the latent volume for a single sample ((C, H, W) feature)."""
        tokens = self.constructor(
            self.positional_volume(batch=1), feat.unsqueeze(0), cam_vec.reshape(1, -1), t
        )
        return self.constructor.to_volume_grid(tokens[0])

    def view_features(self, volume: VolumeGrid, cam: CameraParams) -> torch.Tensor:
        """Warp + aggregate + pool one target view; returns (H, W, C)."""
        cfg = self.cfg
        frustum = warp_volume(
            volume, cam, cfg.feature_size, cfg.feature_size, cfg.near, cfg.far, cfg.depth_samples
        )
        return pool_depth(self.aggregator(frustum.values))

    def synthesize(self, feat: torch.Tensor, cam: CameraParams, t) -> torch.Tensor:
        """(C, H, W) reference feature -> (H, W, C) target-view feature map.

        No ground-truth input pose is required: the input camera used for
        modulation is predicted from the features themselves.
        """
        cam_vec = self.predict_camera(feat.unsqueeze(0))[0]
        volume = self.construct_volume(feat, cam_vec, t)
        return self.view_features(volume, cam)


def camera_vectors_to_tensor(cams: list[CameraParams]) -> torch.Tensor:
    from .geometry import camera_to_vector

    return torch.from_numpy(np.stack([camera_to_vector(c) for c in cams]).astype(np.float32))
