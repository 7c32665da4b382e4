"""Multi-agent action conditioning.

Pipeline per frame: a shared encoder embeds each agent's unified action
vector into a latent token; a rotary identity rotation indexed by agent
number breaks the symmetry between agents; a self-attention block models
inter-agent interaction; and adaptive weighting aggregates the K tokens into
one conditioning token per frame.

The identity rotation uses frequencies theta_j = base^(-2j/D) on dimension
pairs (2j, 2j+1), rotating agent i's token by angles i * theta_j. Because
rotations compose, inner products of rotated tokens depend only on the index
difference, which is what lets attention reason about relative identity and
extrapolate to unseen agent counts.

Every stage is frame-local: frame f's output depends only on frame f's
actions.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .nn_common import FeedForward, MaskedAttention, rotate_pairs


@dataclass(frozen=True)
class AieConfig:
    """Rotary identity embedding parameters."""

    base: float = 20.0
    dim: int = 64

    def __post_init__(self):
        if self.base <= 1.0:
            raise ValueError(f"base must exceed 1, got {self.base}")
        if self.dim % 2 != 0:
            raise ValueError(f"dim must be even, got {self.dim}")


def aie_frequencies(cfg: AieConfig, dtype=torch.float32) -> torch.Tensor:
    """theta_j = base^(-2j / dim) for pair index j, strictly decreasing."""
    j = torch.arange(cfg.dim // 2, dtype=torch.float64)
    return (float(cfg.base) ** (-2.0 * j / cfg.dim)).to(dtype)


def aie_angles(agent_indices: torch.Tensor, cfg: AieConfig, dtype=torch.float32) -> torch.Tensor:
    """Rotation angles i * theta_j, shape (*indices, dim/2). Agent 0 gets identity."""
    freqs = aie_frequencies(cfg, dtype=torch.float64)
    angles = agent_indices.to(torch.float64)[..., None] * freqs
    return angles.to(dtype)


def apply_aie(
    tokens: torch.Tensor, cfg: AieConfig, agent_indices: torch.Tensor | None = None
) -> torch.Tensor:
    """Rotate agent tokens by their identity angles.

    tokens: (..., K, D) with D == cfg.dim. agent_indices defaults to 0..K-1
    along the second-to-last axis. Norm-preserving per token.
    """
    if tokens.shape[-1] != cfg.dim:
        raise ValueError(f"token dim {tokens.shape[-1]} != config dim {cfg.dim}")
    k = tokens.shape[-2]
    if agent_indices is None:
        agent_indices = torch.arange(k, device=tokens.device)
    return rotate_pairs(tokens, aie_angles(agent_indices, cfg, dtype=tokens.dtype))


class InteractBlock(nn.Module):
    """Per-frame self-attention across agent tokens plus a feed-forward sublayer.

    With rope_qk=True the identity rotation is applied to queries and keys
    inside the attention (the ablation variant) instead of assuming the
    tokens were already rotated.
    """

    def __init__(self, dim: int, heads: int, rope_qk: bool = False, aie_cfg: AieConfig | None = None):
        super().__init__()
        if rope_qk and aie_cfg is None:
            raise ValueError("rope_qk needs an AieConfig")
        if rope_qk and (dim // heads) % 2 != 0:
            raise ValueError("rope_qk needs an even head dim")
        self.rope_qk = rope_qk
        self.aie_cfg = aie_cfg
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MaskedAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, hidden_mult=2)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        # tokens: (B, K, D); the caller folds frames into the batch axis.
        rot = None
        if self.rope_qk:
            idx = torch.arange(tokens.shape[1], device=tokens.device)
            rot = aie_angles(idx, self.aie_cfg, dtype=tokens.dtype)
        tokens = tokens + self.attn(self.norm1(tokens), q_rot=rot, k_rot=rot)
        tokens = tokens + self.ff(self.norm2(tokens))
        return tokens


class MultiAgentConditioner(nn.Module):
    """Action encoder producing one conditioning token per frame.

    Flags switch off individual stages for ablations; with everything off
    this degenerates to the plain shared-encoder + mean-pool conditioning of
    a standard image-action-to-video baseline.
    """

    def __init__(
        self,
        action_width: int = 9,
        latent_dim: int = 64,
        model_dim: int = 128,
        heads: int = 4,
        aie_base: float = 20.0,
        use_aie: bool = True,
        use_interact: bool = True,
        use_aaw: bool = True,
        aaw_mode: str = "softmax",
        rope_qk: bool = False,
    ):
        super().__init__()
        if aaw_mode not in ("softmax", "sigmoid"):
            raise ValueError(f"unknown aaw_mode {aaw_mode!r}")
        self.aie_cfg = AieConfig(base=aie_base, dim=latent_dim)
        self.use_aie = use_aie
        self.use_interact = use_interact
        self.use_aaw = use_aaw
        self.aaw_mode = aaw_mode
        self.rope_qk = rope_qk
        self.embed = nn.Linear(action_width, latent_dim)
        self.embed_act = nn.SiLU()
        self.interact = InteractBlock(
            latent_dim, heads, rope_qk=rope_qk, aie_cfg=self.aie_cfg if rope_qk else None
        )
        self.weight_mlp = nn.Sequential(
            nn.Linear(latent_dim, latent_dim // 2),
            nn.SiLU(),
            nn.Linear(latent_dim // 2, 1),
        )
        self.proj = nn.Linear(latent_dim, model_dim)

    def embed_actions(self, action_values: torch.Tensor) -> torch.Tensor:
        """(B, F, K, action_width) -> (B, F, K, D); identical actions map to identical tokens."""
        if action_values.shape[-1] != self.embed.in_features:
            raise ValueError(
                f"action width {action_values.shape[-1]} != expected {self.embed.in_features}"
            )
        return self.embed_act(self.embed(action_values))

    def agent_tokens(self, action_values: torch.Tensor) -> torch.Tensor:
        """Embed, rotate and (optionally) mix the per-agent tokens."""
        tokens = self.embed_actions(action_values)
        if self.use_aie and not self.rope_qk:
            tokens = apply_aie(tokens, self.aie_cfg)
        if self.use_interact:
            b, f, k, d = tokens.shape
            tokens = self.interact(tokens.reshape(b * f, k, d)).reshape(b, f, k, d)
        return tokens

    def aggregation_weights(self, tokens: torch.Tensor) -> torch.Tensor:
        """(B, F, K, D) -> (B, F, K) nonnegative weights; softmax mode sums to 1."""
        if not self.use_aaw:
            k = tokens.shape[-2]
            return torch.full(tokens.shape[:-1], 1.0 / k, dtype=tokens.dtype, device=tokens.device)
        logits = self.weight_mlp(tokens).squeeze(-1)
        if self.aaw_mode == "softmax":
            return torch.softmax(logits, dim=-1)
        return torch.sigmoid(logits)

    def forward(self, action_values: torch.Tensor) -> torch.Tensor:
        """(B, F, K, action_width) -> (B, F, model_dim) unified frame tokens."""
        tokens = self.agent_tokens(action_values)
        weights = self.aggregation_weights(tokens)
        projected = self.proj(tokens)
        return (weights[..., None] * projected).sum(dim=-2)
