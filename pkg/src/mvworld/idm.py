"""Learned inverse dynamics: recover per-agent actions from frame pairs.

A small convolutional encoder embeds each multi-view frame (views are
channel-concatenated), a bidirectional GRU aggregates a short temporal window
around the transition, and per-agent heads classify the movement direction
(5-way) and regress the intensity. Scores from this model measure how
faithfully generated videos follow their conditioning actions.

Transitions whose action is not uniquely recoverable from the states (the
analytic oracle's ambiguity flag: clamped or conflicted moves) are excluded
from the training loss, since their labels are unlearnable from pixels.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .dataset.episodes import Episode
from .nn_common import normalize_frames
from .seeding import derive, np_rng
from .worldsim import DIRECTION_ORDER, oracle_idm

DIRECTION_INDEX = {d: i for i, d in enumerate(DIRECTION_ORDER)}


@dataclass(frozen=True)
class IdmConfig:
    num_agents: int = 2
    num_views: int = 2
    window: int = 1  # context frames on each side of the transition pair
    conv_channels: int = 32
    hidden: int = 96
    iterations: int = 600
    batch_size: int = 32
    learning_rate: float = 3e-4
    seed: int = 0
    holdout_fraction: float = 0.2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "IdmConfig":
        return cls(**d)


class IdmModel(nn.Module):
    def __init__(self, cfg: IdmConfig):
        super().__init__()
        self.idm_cfg = cfg
        ch = cfg.conv_channels
        in_ch = 3 * cfg.num_views
        self.encoder = nn.Sequential(
            nn.Conv2d(in_ch, ch, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(ch, ch, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(ch, ch, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(ch, ch, 3, stride=1, padding=1),
            nn.SiLU(),
            nn.AdaptiveAvgPool2d((2, 2)),
        )
        self.frame_proj = nn.Linear(ch * 4, cfg.hidden)
        self.temporal = nn.GRU(
            cfg.hidden, cfg.hidden, batch_first=True, bidirectional=True
        )
        head_in = 4 * cfg.hidden  # both GRU directions at both transition frames
        self.direction_head = nn.Linear(head_in, cfg.num_agents * 5)
        self.intensity_head = nn.Linear(head_in, cfg.num_agents)

    @property
    def window_length(self) -> int:
        return 2 + 2 * self.idm_cfg.window

    def forward(self, windows: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """windows: (B, T, V, H, W, 3) normalized floats with T = window_length.

        Returns (direction logits (B, K, 5), intensity (B, K)).
        """
        b, t, v, h, w, _ = windows.shape
        x = windows.permute(0, 1, 2, 5, 3, 4).reshape(b * t, v * 3, h, w)
        feats = self.encoder(x).reshape(b, t, -1)
        feats = self.frame_proj(feats)
        seq, _ = self.temporal(feats)
        i0 = self.idm_cfg.window
        pooled = torch.cat([seq[:, i0], seq[:, i0 + 1]], dim=-1)
        k = self.idm_cfg.num_agents
        return self.direction_head(pooled).reshape(b, k, 5), self.intensity_head(pooled)


def transition_window(frames_per_view: np.ndarray, t: int, window: int) -> np.ndarray:
    """Frames [t-window, t+1+window] of every view, edge-padded, stacked (T, V, H, W, 3)."""
    num = frames_per_view.shape[1]
    idx = np.clip(np.arange(t - window, t + 2 + window), 0, num - 1)
    return frames_per_view[:, idx].transpose(1, 0, 2, 3, 4)


def gt_labels(ep: Episode, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Direction index and intensity per agent for the transition at frame t."""
    world = ep.actions.world_actions(t)
    dirs = np.array([DIRECTION_INDEX[a.direction] for a in world], dtype=np.int64)
    inten = np.array([a.intensity for a in world], dtype=np.float32)
    return dirs, inten


def transition_ambiguous(ep: Episode, t: int) -> np.ndarray:
    inferred = oracle_idm(ep.world_config, ep.states[t], ep.states[t + 1])
    return np.array([r.ambiguous for r in inferred])


def _episode_stack(ep: Episode) -> np.ndarray:
    return np.stack(ep.frames)  # (V, I, H, W, 3)


def _dataset(episodes: list[Episode]) -> list[tuple[int, int]]:
    return [(e, t) for e, ep in enumerate(episodes) for t in range(ep.num_frames - 1)]


def train_idm(
    episodes: list[Episode], cfg: IdmConfig
) -> tuple[IdmModel, dict]:
    """Supervised IDM training; returns the model and held-out validation stats.

    Validation compares predictions against the analytic oracle on held-out
    unambiguous ("clean") transitions.
    """
    if not episodes:
        raise ValueError("empty episode set")
    rng = np_rng(cfg.seed, "idm-split")
    order = rng.permutation(len(episodes))
    n_hold = max(1, int(round(len(episodes) * cfg.holdout_fraction)))
    hold_ids = set(order[:n_hold].tolist())
    train_eps = [ep for i, ep in enumerate(episodes) if i not in hold_ids]
    val_eps = [ep for i, ep in enumerate(episodes) if i in hold_ids]
    if not train_eps:
        raise ValueError("holdout fraction leaves no training episodes")

    torch.manual_seed(derive(cfg.seed, "idm-init"))
    model = IdmModel(cfg)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate)
    stacks = [_episode_stack(ep) for ep in train_eps]
    pool = []
    for e, ep in enumerate(train_eps):
        for t in range(ep.num_frames - 1):
            if not transition_ambiguous(ep, t).all():
                pool.append((e, t))
    sample_rng = np_rng(cfg.seed, "idm-batches")
    ce = nn.CrossEntropyLoss(reduction="none")

    model.train()
    for it in range(cfg.iterations):
        picks = sample_rng.integers(0, len(pool), size=cfg.batch_size)
        windows, dir_labels, inten_labels, masks = [], [], [], []
        for p in picks:
            e, t = pool[int(p)]
            windows.append(transition_window(stacks[e], t, cfg.window))
            d, i = gt_labels(train_eps[e], t)
            dir_labels.append(d)
            inten_labels.append(i)
            masks.append(~transition_ambiguous(train_eps[e], t))
        x = normalize_frames(np.stack(windows))
        d_logits, intensity = model(x)
        dirs = torch.from_numpy(np.stack(dir_labels))
        intens = torch.from_numpy(np.stack(inten_labels))
        keep = torch.from_numpy(np.stack(masks))
        dir_loss = ce(d_logits.reshape(-1, 5), dirs.reshape(-1)).reshape(keep.shape)
        int_loss = (intensity - intens).pow(2)
        denom = keep.sum().clamp(min=1)
        loss = ((dir_loss + int_loss) * keep).sum() / denom
        if not torch.isfinite(loss):
            raise RuntimeError(f"idm training diverged at iteration {it}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()

    model.eval()
    stats = validate_idm(model, val_eps)
    stats["train_episodes"] = len(train_eps)
    stats["val_episodes"] = len(val_eps)
    return model, stats


def predict_transitions(model: IdmModel, frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Run the IDM over every transition of a multi-view video.

    frames: (V, I, H, W, 3) uint8. Returns (direction indices (I-1, K),
    intensities (I-1, K)).
    """
    cfg = model.idm_cfg
    num = frames.shape[1]
    windows = np.stack([transition_window(frames, t, cfg.window) for t in range(num - 1)])
    with torch.no_grad():
        d_logits, intensity = model(normalize_frames(windows))
    return d_logits.argmax(-1).numpy(), intensity.numpy()


def validate_idm(model: IdmModel, episodes: list[Episode]) -> dict:
    """Oracle agreement on clean (unambiguous) transitions of clean renders."""
    agree = 0
    total = 0
    sq_err = 0.0
    stay_count = 0
    for ep in episodes:
        dirs, intens = predict_transitions(model, _episode_stack(ep))
        for t in range(ep.num_frames - 1):
            inferred = oracle_idm(ep.world_config, ep.states[t], ep.states[t + 1])
            for k, r in enumerate(inferred):
                if r.ambiguous:
                    continue
                total += 1
                oracle_dir = DIRECTION_INDEX[r.action.direction]
                agree += int(dirs[t, k] == oracle_dir)
                sq_err += float(intens[t, k] - r.action.intensity) ** 2
                stay_count += int(oracle_dir == 0)
    if total == 0:
        raise ValueError("no unambiguous transitions to validate on")
    return {
        "direction_agreement": agree / total,
        "intensity_mse": sq_err / total,
        "stay_fraction": stay_count / total,
        "transitions": total,
    }


def save_idm(path, model: IdmModel, meta: dict | None = None):
    from .engine.checkpoint import save_checkpoint

    tensors = {f"idm.{n}": v.detach().cpu().numpy() for n, v in model.state_dict().items()}
    full_meta = {"idm_config": model.idm_cfg.to_dict()}
    full_meta.update(meta or {})
    return save_checkpoint(path, tensors, full_meta)


def load_idm(path) -> tuple[IdmModel, dict]:
    from .engine.checkpoint import load_checkpoint

    ckpt = load_checkpoint(path)
    cfg = IdmConfig.from_dict(ckpt.meta["idm_config"])
    model = IdmModel(cfg)
    state = {n[len("idm.") :]: torch.from_numpy(a.copy()) for n, a in ckpt.tensors.items()}
    model.load_state_dict(state)
    model.eval()
    return model, ckpt.meta
