from .checkpoint import (
    Checkpoint,
    load_checkpoint,
    load_world_model,
    save_checkpoint,
    save_world_model,
)
from .flow import FlowSample, fm_loss, fm_sample_point
from .sampling import (
    chunk_seed,
    euler_integrate,
    euler_sample,
    generate_views_parallel,
    rollout_autoregressive,
)
from .training import TrainConfig, TrainResult, cosine_lr, train

__all__ = [
    "Checkpoint",
    "load_checkpoint",
    "load_world_model",
    "save_checkpoint",
    "save_world_model",
    "FlowSample",
    "fm_loss",
    "fm_sample_point",
    "chunk_seed",
    "euler_integrate",
    "euler_sample",
    "generate_views_parallel",
    "rollout_autoregressive",
    "TrainConfig",
    "TrainResult",
    "cosine_lr",
    "train",
]
