"""Global state encoder: variable-count multi-view observations -> shared
conditioning tokens.

Each synchronized view is patch-embedded into n tokens; joint self-attention
layers then attend across all C*n tokens so every view informs every other
(the cross-view fusion that anchors per-view generation to one coherent
environment state). A tokenwise MLP lifts the fused latents to the backbone
width, and a learned modality embedding distinguishes these tokens from
action tokens in the backbone's cross-attention.

No view-index embedding exists anywhere, so the encoder is permutation
equivariant over views and accepts any C >= 1 without parameter changes.

Backbone variants for the ablation harness:
    joint    cross-view self-attention (default)
    perview  identical layers but attention restricted within each view
    ae       per-view, per-token channel bottleneck instead of attention
    none     handled by the caller (no global state conditioning)
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .nn_common import SelfAttentionBlock, sincos_2d

GSE_MODES = ("joint", "perview", "ae", "none")


@dataclass(frozen=True)
class GseConfig:
    patch: int = 8
    dim: int = 96
    num_joint_layers: int = 2
    heads: int = 4
    mode: str = "joint"
    frozen: bool = False
    bottleneck_dim: int = 8  # ae mode only

    def __post_init__(self):
        if self.mode not in GSE_MODES:
            raise ValueError(f"mode must be one of {GSE_MODES}, got {self.mode!r}")
        if self.dim % self.heads != 0:
            raise ValueError("dim must be divisible by heads")


class GlobalStateEncoder(nn.Module):
    def __init__(self, cfg: GseConfig, image_height: int, image_width: int, model_dim: int):
        super().__init__()
        if cfg.mode == "none":
            raise ValueError("mode 'none' means no encoder; construct nothing instead")
        if image_height % cfg.patch or image_width % cfg.patch:
            raise ValueError(
                f"patch {cfg.patch} must divide image dims ({image_height}, {image_width})"
            )
        self.cfg = cfg
        self.image_height = image_height
        self.image_width = image_width
        self.grid_h = image_height // cfg.patch
        self.grid_w = image_width // cfg.patch
        self.tokens_per_view = self.grid_h * self.grid_w
        self.patch_embed = nn.Linear(cfg.patch * cfg.patch * 3, cfg.dim)
        pos = sincos_2d(self.grid_h, self.grid_w, cfg.dim).reshape(self.tokens_per_view, cfg.dim)
        self.register_buffer("pos_embed", pos, persistent=False)
        if cfg.mode in ("joint", "perview"):
            self.layers = nn.ModuleList(
                SelfAttentionBlock(cfg.dim, cfg.heads, hidden_mult=2)
                for _ in range(cfg.num_joint_layers)
            )
        else:  # ae: per-token channel bottleneck, no attention
            self.layers = nn.ModuleList()
            self.bottleneck = nn.Sequential(
                nn.Linear(cfg.dim, cfg.bottleneck_dim),
                nn.SiLU(),
                nn.Linear(cfg.bottleneck_dim, cfg.dim),
            )
        self.out_mlp = nn.Sequential(
            nn.Linear(cfg.dim, cfg.dim * 2),
            nn.SiLU(),
            nn.Linear(cfg.dim * 2, model_dim),
        )
        self.modality_embed = nn.Parameter(torch.zeros(model_dim))
        if cfg.frozen:
            # Fixed random features: emulates conditioning on a frozen
            # pretrained backbone.
            for p in self.parameters():
                p.requires_grad_(False)

    def _patchify(self, obs: torch.Tensor) -> torch.Tensor:
        b, c, h, w, ch = obs.shape
        p = self.cfg.patch
        x = obs.reshape(b, c, self.grid_h, p, self.grid_w, p, ch)
        x = x.permute(0, 1, 2, 4, 3, 5, 6).reshape(b, c, self.tokens_per_view, p * p * ch)
        return x

    def encode_views(self, obs: torch.Tensor) -> torch.Tensor:
        """(B, C, H, W, 3) normalized floats -> (B, C, n, d) latents."""
        if obs.ndim != 5 or obs.shape[-1] != 3:
            raise ValueError(f"expected (B, C, H, W, 3), got {tuple(obs.shape)}")
        if obs.shape[2] != self.image_height or obs.shape[3] != self.image_width:
            raise ValueError(
                f"view resolution {tuple(obs.shape[2:4])} != configured "
                f"({self.image_height}, {self.image_width})"
            )
        obs = obs.to(self.patch_embed.weight.dtype)
        b, c = obs.shape[:2]
        tokens = self.patch_embed(self._patchify(obs)) + self.pos_embed
        if self.cfg.mode == "joint":
            flat = tokens.reshape(b, c * self.tokens_per_view, self.cfg.dim)
            for layer in self.layers:
                flat = layer(flat)
            return flat.reshape(b, c, self.tokens_per_view, self.cfg.dim)
        if self.cfg.mode == "perview":
            flat = tokens.reshape(b * c, self.tokens_per_view, self.cfg.dim)
            for layer in self.layers:
                flat = layer(flat)
            return flat.reshape(b, c, self.tokens_per_view, self.cfg.dim)
        return tokens + self.bottleneck(tokens)

    def project(self, latents: torch.Tensor) -> torch.Tensor:
        """(B, C, n, d) -> (B, C*n, model_dim) backbone-width tokens."""
        b, c, n, d = latents.shape
        out = self.out_mlp(latents).reshape(b, c * n, -1)
        return out + self.modality_embed

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        return self.project(self.encode_views(obs))
