"""Shared neural building blocks: pixel normalization, sinusoidal embeddings,
masked attention and feed-forward sublayers.

Attention is implemented by hand (matmul + masked softmax) rather than via a
fused kernel: masked entries contribute exactly zero, so outputs at positions
whose visible inputs are unchanged stay bit-identical when masked inputs
change. Several causality contracts depend on that.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn


def normalize_frames(frames) -> torch.Tensor:
    """uint8 pixels [0, 255] -> float tensor in [-1, 1]."""
    if isinstance(frames, np.ndarray):
        frames = torch.from_numpy(np.ascontiguousarray(frames))
    return frames.to(torch.float32) / 127.5 - 1.0


def denormalize_frames(frames: torch.Tensor) -> np.ndarray:
    """Float tensor in [-1, 1] -> uint8 pixels, clamped."""
    px = (frames.detach().to(torch.float32) + 1.0) * 127.5
    return px.clamp_(0.0, 255.0).round_().to(torch.uint8).cpu().numpy()


def sincos_1d(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """Fixed sinusoidal embedding of integer positions, shape (*pos, dim)."""
    if dim % 2 != 0:
        raise ValueError("embedding dim must be even")
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = positions.to(torch.float64)[..., None] * freqs
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    return emb.to(torch.float32)


def sincos_2d(height: int, width: int, dim: int) -> torch.Tensor:
    """Fixed 2D sinusoidal grid embedding, shape (height, width, dim)."""
    if dim % 2 != 0:
        raise ValueError("embedding dim must be even")
    ys = sincos_1d(torch.arange(height), dim // 2)  # (H, dim/2)
    xs = sincos_1d(torch.arange(width), dim // 2)  # (W, dim/2)
    grid = torch.cat(
        [ys[:, None, :].expand(height, width, -1), xs[None, :, :].expand(height, width, -1)],
        dim=-1,
    )
    return grid


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding of continuous timesteps in [0, 1], shape (B, dim)."""
    if dim % 2 != 0:
        raise ValueError("embedding dim must be even")
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float32, device=t.device) / half
    ).to(t.dtype)
    args = t[:, None] * freqs[None, :] * 1000.0  # scale [0,1] onto the usual step range
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class MaskedAttention(nn.Module):
    """Multi-head attention with an optional boolean keep-mask.

    mask has shape (Lq, Lk) (broadcast over batch and heads); True means the
    key is visible to the query. Disallowed logits are set to -inf before the
    softmax so they contribute exactly zero.
    """

    def __init__(self, dim: int, heads: int, kv_dim: int | None = None):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        kv_dim = kv_dim if kv_dim is not None else dim
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(kv_dim, dim)
        self.v_proj = nn.Linear(kv_dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(
        self,
        x: torch.Tensor,
        kv: torch.Tensor | None = None,
        mask: torch.Tensor | None = None,
        q_rot: torch.Tensor | None = None,
        k_rot: torch.Tensor | None = None,
    ) -> torch.Tensor:
        kv = x if kv is None else kv
        b, lq, _ = x.shape
        lk = kv.shape[1]
        q = self.q_proj(x)
        k = self.k_proj(kv)
        if q_rot is not None:
            q = rotate_pairs(q, q_rot)
        if k_rot is not None:
            k = rotate_pairs(k, k_rot)
        q = q.view(b, lq, self.heads, self.head_dim).transpose(1, 2)
        k = k.view(b, lk, self.heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(kv).view(b, lk, self.heads, self.head_dim).transpose(1, 2)
        logits = torch.matmul(q, k.transpose(-1, -2)) / math.sqrt(self.head_dim)
        if mask is not None:
            logits = logits.masked_fill(~mask, float("-inf"))
        weights = torch.softmax(logits, dim=-1)
        out = torch.matmul(weights, v)
        out = out.transpose(1, 2).reshape(b, lq, self.heads * self.head_dim)
        return self.out_proj(out)


def rotate_pairs(x: torch.Tensor, angles: torch.Tensor) -> torch.Tensor:
    """Rotate consecutive dimension pairs (2j, 2j+1) of x by the given angles.

    angles broadcasts against x's leading dims and has last dim x.shape[-1]//2.
    Norm-preserving per token.
    """
    if x.shape[-1] % 2 != 0:
        raise ValueError("last dim must be even for pairwise rotation")
    cos = torch.cos(angles)
    sin = torch.sin(angles)
    even = x[..., 0::2]
    odd = x[..., 1::2]
    out = torch.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden_mult: int = 4):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, dim * hidden_mult),
            nn.GELU(),
            nn.Linear(dim * hidden_mult, dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class SelfAttentionBlock(nn.Module):
    """Pre-norm transformer block: self-attention + feed-forward, residuals."""

    def __init__(self, dim: int, heads: int, hidden_mult: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MaskedAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, hidden_mult)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None, **attn_kwargs) -> torch.Tensor:
        x = x + self.attn(self.norm1(x), mask=mask, **attn_kwargs)
        x = x + self.ff(self.norm2(x))
        return x
