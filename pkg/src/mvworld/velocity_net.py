"""Flow-matching velocity network: a small diffusion transformer over
spatiotemporal video tokens.

Block pipeline (all residual, all modulated by the timestep):
    self-attention  -> action cross-attention -> global-state cross-attention
                    -> feed-forward

Causality contract: a video token of frame i may attend only to video tokens
and action tokens of frames <= i. The frame-causal mask therefore covers the
self-attention as well as the action cross-attention; otherwise later-frame
information would re-enter earlier frames through the bidirectional video
pathway after the first block. Global-state tokens come from the initial
observations, carry no action information, and are visible to every frame.

Observation conditioning enters twice: frame 0's tokens are built from the
clean observation instead of noise, and every token additionally carries the
observation patch at its own spatial location (channel concatenation), so
static scene content is available directly rather than only through
attention to frame 0.

Masked attention entries contribute exactly zero (see nn_common), so outputs
at frames < j are bit-identical under any change to the action at frame j.

The timestep enters through a sinusoidal embedding driving per-block
scale/shift/gate modulation (adaLN, gates zero-initialized). Frame 0 tokens
are computed from the clean first-frame observation, never from noise, and
are excluded from the training loss.
"""

from __future__ import annotations

import torch
from torch import nn

from .nn_common import FeedForward, MaskedAttention, sincos_1d, sincos_2d, timestep_embedding


def patchify(frames: torch.Tensor, patch: int) -> torch.Tensor:
    """(B, F, H, W, C) -> (B, F, H/p, W/p, p*p*C) raw patch fold, lossless."""
    b, f, h, w, c = frames.shape
    if h % patch or w % patch:
        raise ValueError(f"patch {patch} must divide frame dims ({h}, {w})")
    x = frames.reshape(b, f, h // patch, patch, w // patch, patch, c)
    return x.permute(0, 1, 2, 4, 3, 5, 6).reshape(b, f, h // patch, w // patch, patch * patch * c)


def unpatchify(tokens: torch.Tensor, patch: int, channels: int = 3) -> torch.Tensor:
    """Inverse of patchify: (B, F, hp, wp, p*p*C) -> (B, F, H, W, C)."""
    b, f, hp, wp, d = tokens.shape
    if d != patch * patch * channels:
        raise ValueError(f"token width {d} != patch*patch*channels {patch * patch * channels}")
    x = tokens.reshape(b, f, hp, wp, patch, patch, channels)
    return x.permute(0, 1, 2, 4, 3, 5, 6).reshape(b, f, hp * patch, wp * patch, channels)


def causal_action_mask(num_frames: int, device=None) -> torch.Tensor:
    """(F, F) boolean mask: entry [i, j] allows frame i to see action row j iff j <= i."""
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    return torch.tril(torch.ones(num_frames, num_frames, dtype=torch.bool, device=device))


def modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return x * (1.0 + scale[:, None, :]) + shift[:, None, :]


class VelocityBlock(nn.Module):
    def __init__(self, dim: int, heads: int, use_gstate: bool):
        super().__init__()
        self.use_gstate = use_gstate
        n_mods = 12 if use_gstate else 9
        self.norm_sa = nn.LayerNorm(dim, elementwise_affine=False)
        self.self_attn = MaskedAttention(dim, heads)
        self.norm_act = nn.LayerNorm(dim, elementwise_affine=False)
        self.act_attn = MaskedAttention(dim, heads)
        if use_gstate:
            self.norm_gs = nn.LayerNorm(dim, elementwise_affine=False)
            self.gs_attn = MaskedAttention(dim, heads)
        self.norm_ff = nn.LayerNorm(dim, elementwise_affine=False)
        self.ff = FeedForward(dim)
        self.modulation = nn.Linear(dim, n_mods * dim)
        nn.init.zeros_(self.modulation.weight)
        nn.init.zeros_(self.modulation.bias)

    def forward(self, x, t_emb, act_tokens, gstate, self_mask, act_mask):
        mods = self.modulation(torch.nn.functional.silu(t_emb)).chunk(
            12 if self.use_gstate else 9, dim=-1
        )
        s_sa, sc_sa, g_sa = mods[0], mods[1], mods[2]
        s_xa, sc_xa, g_xa = mods[3], mods[4], mods[5]
        if self.use_gstate:
            s_gs, sc_gs, g_gs = mods[6], mods[7], mods[8]
            s_ff, sc_ff, g_ff = mods[9], mods[10], mods[11]
        else:
            s_ff, sc_ff, g_ff = mods[6], mods[7], mods[8]
        x = x + g_sa[:, None, :] * self.self_attn(
            modulate(self.norm_sa(x), s_sa, sc_sa), mask=self_mask
        )
        x = x + g_xa[:, None, :] * self.act_attn(
            modulate(self.norm_act(x), s_xa, sc_xa), kv=act_tokens, mask=act_mask
        )
        if self.use_gstate and gstate is not None:
            x = x + g_gs[:, None, :] * self.gs_attn(
                modulate(self.norm_gs(x), s_gs, sc_gs), kv=gstate
            )
        x = x + g_ff[:, None, :] * self.ff(modulate(self.norm_ff(x), s_ff, sc_ff))
        return x


class VelocityNet(nn.Module):
    def __init__(
        self,
        image_height: int,
        image_width: int,
        context_frames: int,
        model_dim: int = 128,
        num_blocks: int = 6,
        heads: int = 4,
        patch: int = 4,
        use_gstate: bool = True,
        channels: int = 3,
    ):
        super().__init__()
        if context_frames < 2:
            raise ValueError("context_frames must be >= 2")
        if image_height % patch or image_width % patch:
            raise ValueError("patch must divide image dims")
        self.image_height = image_height
        self.image_width = image_width
        self.context_frames = context_frames
        self.model_dim = model_dim
        self.patch = patch
        self.channels = channels
        self.use_gstate = use_gstate
        self.grid_h = image_height // patch
        self.grid_w = image_width // patch
        self.tokens_per_frame = self.grid_h * self.grid_w

        # Input per token: the noisy patch plus the observation patch at the
        # same spatial location.
        self.token_embed = nn.Linear(2 * patch * patch * channels, model_dim)
        spatial = sincos_2d(self.grid_h, self.grid_w, model_dim)
        temporal = sincos_1d(torch.arange(context_frames), model_dim)
        pos = temporal[:, None, None, :] + spatial[None, :, :, :]
        self.register_buffer(
            "pos_embed",
            pos.reshape(context_frames * self.tokens_per_frame, model_dim),
            persistent=False,
        )

        frame_of_token = torch.arange(context_frames).repeat_interleave(self.tokens_per_frame)
        causal = causal_action_mask(context_frames)
        self.register_buffer("self_mask", causal[frame_of_token][:, frame_of_token], persistent=False)
        self.register_buffer("act_mask", causal[frame_of_token], persistent=False)

        self.t_mlp = nn.Sequential(nn.Linear(model_dim, model_dim), nn.SiLU(), nn.Linear(model_dim, model_dim))
        self.blocks = nn.ModuleList(
            VelocityBlock(model_dim, heads, use_gstate) for _ in range(num_blocks)
        )
        self.final_norm = nn.LayerNorm(model_dim, elementwise_affine=False)
        self.final_mod = nn.Linear(model_dim, 2 * model_dim)
        self.final_proj = nn.Linear(model_dim, patch * patch * channels)
        nn.init.zeros_(self.final_mod.weight)
        nn.init.zeros_(self.final_mod.bias)
        nn.init.zeros_(self.final_proj.weight)
        nn.init.zeros_(self.final_proj.bias)

    def forward(
        self,
        x_t: torch.Tensor,
        t: torch.Tensor,
        act_tokens: torch.Tensor,
        gstate: torch.Tensor | None,
        obs_frame: torch.Tensor,
    ) -> torch.Tensor:
        """Predict the velocity field.

        x_t: (B, F, H, W, C) noised frames in [-1, 1] space.
        t: (B,) flow timesteps in [0, 1].
        act_tokens: (B, F, model_dim) unified frame action tokens.
        gstate: (B, G, model_dim) global-state tokens, or None.
        obs_frame: (B, H, W, C) clean first frame; replaces x_t frame 0.
        Returns a velocity tensor shaped like x_t.
        """
        b, f, h, w, c = x_t.shape
        if (f, h, w, c) != (self.context_frames, self.image_height, self.image_width, self.channels):
            raise ValueError(
                f"input shape {(f, h, w, c)} != configured "
                f"{(self.context_frames, self.image_height, self.image_width, self.channels)}"
            )
        if t.shape != (b,):
            raise ValueError(f"t must have shape ({b},), got {tuple(t.shape)}")
        if bool((t < 0).any()) or bool((t > 1).any()):
            raise ValueError("t must lie in [0, 1]")
        if act_tokens.shape != (b, f, self.model_dim):
            raise ValueError(f"act_tokens must have shape {(b, f, self.model_dim)}")
        if self.use_gstate and gstate is not None and gstate.shape[::2] != (b, self.model_dim):
            raise ValueError("gstate must have shape (B, G, model_dim)")

        dtype = self.token_embed.weight.dtype
        obs = obs_frame.to(dtype)
        x = torch.cat([obs[:, None], x_t.to(dtype)[:, 1:]], dim=1)
        obs_patches = patchify(obs[:, None], self.patch).expand(-1, f, -1, -1, -1)
        raw = torch.cat([patchify(x, self.patch), obs_patches], dim=-1)
        tokens = self.token_embed(raw)
        tokens = tokens.reshape(b, f * self.tokens_per_frame, self.model_dim) + self.pos_embed
        t_emb = self.t_mlp(timestep_embedding(t.to(tokens.dtype), self.model_dim))
        for block in self.blocks:
            tokens = block(tokens, t_emb, act_tokens, gstate, self.self_mask, self.act_mask)
        shift, scale = self.final_mod(torch.nn.functional.silu(t_emb)).chunk(2, dim=-1)
        tokens = modulate(self.final_norm(tokens), shift, scale)
        out = self.final_proj(tokens).reshape(
            b, f, self.grid_h, self.grid_w, self.patch * self.patch * self.channels
        )
        return unpatchify(out, self.patch, self.channels)
