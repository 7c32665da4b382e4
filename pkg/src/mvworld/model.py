"""Model assembly: configuration, the conditioning modules and the velocity
backbone wired together, plus the named ablation presets.

Checkpoint namespaces come straight from the attribute names: parameters of
the action conditioner live under "macm.", the global state encoder under
"gse." and the velocity backbone under "net.".
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np
import torch
from torch import nn

from .gse import GlobalStateEncoder, GseConfig
from .macm import MultiAgentConditioner
from .nn_common import normalize_frames
from .velocity_net import VelocityNet


@dataclass(frozen=True)
class ModelConfig:
    image_height: int = 48
    image_width: int = 48
    context_frames: int = 16
    model_dim: int = 128
    num_blocks: int = 6
    heads: int = 4
    video_patch: int = 4
    action_width: int = 9
    action_latent_dim: int = 64
    macm_heads: int = 4
    macm_enabled: bool = True
    aie_enabled: bool = True
    aie_base: float = 20.0
    aie_rope_qk: bool = False
    interact_enabled: bool = True
    aaw_enabled: bool = True
    aaw_mode: str = "softmax"
    gse_mode: str = "joint"
    gse_patch: int = 8
    gse_dim: int = 96
    gse_layers: int = 2
    gse_heads: int = 4
    gse_frozen: bool = False

    def __post_init__(self):
        if self.context_frames < 2:
            raise ValueError("context_frames must be >= 2")
        if self.image_height % self.video_patch or self.image_width % self.video_patch:
            raise ValueError("video_patch must divide the image dimensions")
        if self.gse_mode != "none" and (
            self.image_height % self.gse_patch or self.image_width % self.gse_patch
        ):
            raise ValueError("gse_patch must divide the image dimensions")
        if self.action_latent_dim % 2:
            raise ValueError("action_latent_dim must be even")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# Named configuration toggles used by training/eval commands. "standard" is
# the plain image-action-to-video baseline; adding the action conditioner and
# the global state encoder step by step reproduces the comparison structure
# of the ablation tables.
ABLATION_PRESETS: dict[str, dict] = {
    "standard": dict(macm_enabled=False, gse_mode="none"),
    "macm": dict(macm_enabled=True, gse_mode="none"),
    "both": dict(macm_enabled=True, gse_mode="joint"),
    "base20": dict(macm_enabled=True, aie_base=20.0, gse_mode="none"),
    "base10k": dict(macm_enabled=True, aie_base=10000.0, gse_mode="none"),
    "gse-none": dict(macm_enabled=True, gse_mode="none"),
    "gse-perview": dict(macm_enabled=True, gse_mode="perview"),
    "gse-ae": dict(macm_enabled=True, gse_mode="ae"),
    "gse-joint": dict(macm_enabled=True, gse_mode="joint"),
    # Criterion probe: full model minus the identity rotation.
    "noaie": dict(macm_enabled=True, aie_enabled=False, gse_mode="joint"),
}


def apply_preset(cfg: ModelConfig, preset: str) -> ModelConfig:
    if preset not in ABLATION_PRESETS:
        raise ValueError(f"unknown ablation preset {preset!r}; choose from {sorted(ABLATION_PRESETS)}")
    return replace(cfg, **ABLATION_PRESETS[preset])


class WorldModel(nn.Module):
    """Velocity backbone plus its two conditioning encoders."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        macm_on = cfg.macm_enabled
        self.macm = MultiAgentConditioner(
            action_width=cfg.action_width,
            latent_dim=cfg.action_latent_dim,
            model_dim=cfg.model_dim,
            heads=cfg.macm_heads,
            aie_base=cfg.aie_base,
            use_aie=macm_on and cfg.aie_enabled,
            use_interact=macm_on and cfg.interact_enabled,
            use_aaw=macm_on and cfg.aaw_enabled,
            aaw_mode=cfg.aaw_mode,
            rope_qk=macm_on and cfg.aie_rope_qk,
        )
        if cfg.gse_mode == "none":
            self.gse = None
        else:
            self.gse = GlobalStateEncoder(
                GseConfig(
                    patch=cfg.gse_patch,
                    dim=cfg.gse_dim,
                    num_joint_layers=cfg.gse_layers,
                    heads=cfg.gse_heads,
                    mode=cfg.gse_mode,
                    frozen=cfg.gse_frozen,
                ),
                cfg.image_height,
                cfg.image_width,
                cfg.model_dim,
            )
        self.net = VelocityNet(
            image_height=cfg.image_height,
            image_width=cfg.image_width,
            context_frames=cfg.context_frames,
            model_dim=cfg.model_dim,
            num_blocks=cfg.num_blocks,
            heads=cfg.heads,
            patch=cfg.video_patch,
            use_gstate=cfg.gse_mode != "none",
        )

    def condition_actions(self, action_values) -> torch.Tensor:
        """(B, F, K, action_width) array or tensor -> (B, F, model_dim)."""
        if isinstance(action_values, np.ndarray):
            action_values = torch.from_numpy(np.ascontiguousarray(action_values))
        return self.macm(action_values.to(self.macm.embed.weight.dtype))

    def encode_global_state(self, observations) -> torch.Tensor | None:
        """(B, C, H, W, 3) uint8 observations -> (B, C*n, model_dim) or None."""
        if self.gse is None:
            return None
        return self.gse(normalize_frames(observations))

    def velocity(self, x_t, t, act_tokens, gstate, obs_frame) -> torch.Tensor:
        return self.net(x_t, t, act_tokens, gstate, obs_frame)
