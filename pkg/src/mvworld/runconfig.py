"""Run configuration: one YAML file with command-scoped sections, strict key
validation, spec defaults, and a content hash stamped into every artifact.

Sections: world, dataset, model, train, sample, eval. Unknown keys anywhere
are rejected. CLI flags override file values; the hash covers the fully
resolved configuration, so identical hashes imply identical behavior.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .idm import IdmConfig
from .model import ModelConfig, apply_preset
from .engine.training import TrainConfig
from .worldsim import CameraSpec, WorldConfig, full_grid_camera

_WORLD_DEFAULTS = {
    "grid_size": 12,
    "num_agents": 2,
    "num_landmarks": 3,
    "cell_pixels": 4,
    "cameras": None,  # None -> two full-grid views (rotations 0 and 90)
    "palette": None,
}

_DATASET_DEFAULTS = {
    "episode_length": 24,
    "perturb_prob": 0.3,
    "n_success": 10,
    "n_failure": 20,  # 2:1 failure:success by default
    "plan": "goal",
}

_MODEL_DEFAULTS = {
    "context_frames": 16,
    "model_dim": 128,
    "num_blocks": 6,
    "heads": 4,
    "video_patch": 4,
    "action_latent_dim": 64,
    "macm_heads": 4,
    "aie_base": 20.0,
    "aie_rope_qk": False,
    "aaw_mode": "softmax",
    "gse_patch": 8,
    "gse_dim": 96,
    "gse_layers": 2,
    "gse_heads": 4,
    "gse_frozen": False,
    "preset": "both",
}

_TRAIN_DEFAULTS = {
    "iterations": 2000,
    "batch_size": 8,
    "learning_rate": 5e-5,
    "schedule": "cosine",
    "betas": [0.9, 0.999],
    "weight_decay": 0.0,
    "grad_clip": 1.0,
    "checkpoint_every": 500,
    "log_every": 25,
}

_SAMPLE_DEFAULTS = {
    "steps": 20,
    "chunks": 1,
}

_EVAL_DEFAULTS = {
    "episodes": 12,
    "steps": 20,
    "holdout_seed_offset": 100000,
    "thresholds": {
        "action_discrete_min": 0.0,
        "action_continuous_min": 0.0,
        "psnr_min": 0.0,
        "xview_max": 1.0e9,
    },
    "idm": {
        "window": 1,
        "conv_channels": 32,
        "hidden": 96,
        "iterations": 600,
        "batch_size": 32,
        "learning_rate": 3e-4,
        "holdout_fraction": 0.2,
    },
}

_SECTION_DEFAULTS = {
    "world": _WORLD_DEFAULTS,
    "dataset": _DATASET_DEFAULTS,
    "model": _MODEL_DEFAULTS,
    "train": _TRAIN_DEFAULTS,
    "sample": _SAMPLE_DEFAULTS,
    "eval": _EVAL_DEFAULTS,
}


class ConfigError(ValueError):
    pass


def _merge(defaults: dict, overrides: dict, path: str) -> dict:
    out = {}
    for key, default in defaults.items():
        if isinstance(default, dict) and key in overrides:
            if not isinstance(overrides[key], dict):
                raise ConfigError(f"{path}.{key} must be a mapping")
            out[key] = _merge(default, overrides[key], f"{path}.{key}")
        elif key in overrides:
            out[key] = overrides[key]
        else:
            out[key] = json.loads(json.dumps(default)) if isinstance(default, (dict, list)) else default
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in {path}: {sorted(unknown)}")
    return out


@dataclass
class RunConfig:
    sections: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def world(self) -> dict:
        return self.sections["world"]

    @property
    def dataset(self) -> dict:
        return self.sections["dataset"]

    @property
    def model(self) -> dict:
        return self.sections["model"]

    @property
    def train(self) -> dict:
        return self.sections["train"]

    @property
    def sample(self) -> dict:
        return self.sections["sample"]

    @property
    def eval(self) -> dict:
        return self.sections["eval"]

    def config_hash(self) -> str:
        canon = json.dumps({"sections": self.sections, "seed": self.seed}, sort_keys=True)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]

    def world_config(self) -> WorldConfig:
        w = self.world
        if w["cameras"] is None:
            cameras = (
                full_grid_camera(w["grid_size"], rotation=0),
                full_grid_camera(w["grid_size"], rotation=90),
            )
        else:
            cameras = tuple(
                CameraSpec(
                    crop_origin=tuple(cam["origin"]),
                    crop_size=tuple(cam["size"]),
                    rotation=cam.get("rotation", 0),
                )
                for cam in w["cameras"]
            )
        palette = tuple(tuple(c) for c in w["palette"]) if w["palette"] else ()
        return WorldConfig(
            grid_size=w["grid_size"],
            num_agents=w["num_agents"],
            num_landmarks=w["num_landmarks"],
            cameras=cameras,
            cell_pixels=w["cell_pixels"],
            palette=palette,
        )

    def model_config(self, preset: str | None = None) -> ModelConfig:
        world = self.world_config()
        shapes = {cam.image_shape(world.cell_pixels) for cam in world.cameras}
        if len(shapes) != 1:
            raise ConfigError(f"all cameras must share one view resolution, got {shapes}")
        (h, w) = next(iter(shapes))
        m = dict(self.model)
        chosen_preset = preset if preset is not None else m.pop("preset")
        m.pop("preset", None)
        cfg = ModelConfig(image_height=h, image_width=w, **m)
        return apply_preset(cfg, chosen_preset)

    def train_config(self, iterations: int | None = None) -> TrainConfig:
        t = dict(self.train)
        t["betas"] = tuple(t["betas"])
        if iterations is not None:
            t["iterations"] = iterations
        return TrainConfig(seed=self.seed, **t)

    def idm_config(self) -> IdmConfig:
        world = self.world_config()
        return IdmConfig(
            num_agents=world.num_agents,
            num_views=world.num_views,
            seed=self.seed,
            **self.eval["idm"],
        )


def resolve_config(raw: dict | None, seed: int = 0) -> RunConfig:
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - set(_SECTION_DEFAULTS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    sections = {
        name: _merge(defaults, raw.get(name, {}) or {}, name)
        for name, defaults in _SECTION_DEFAULTS.items()
    }
    if "seed" in raw:
        seed = int(raw["seed"])
    return RunConfig(sections=sections, seed=seed)


def load_config(path: str | Path | None, seed: int | None = None) -> RunConfig:
    """Load and validate a YAML config file; missing path means all defaults."""
    raw = {}
    if path is not None:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    cfg = resolve_config(raw)
    if seed is not None:
        cfg.seed = int(seed)
    return cfg
