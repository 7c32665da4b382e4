"""Deterministic flow-matching training.

Reproducibility scheme: parameter init draws from a seed-derived torch
generator; iteration i's batch is sample-indexed arithmetic on the epoch
permutations (see SamplePlan) and its t/noise draws come from a generator
seeded by (seed, "fm", i). Nothing depends on wall clock or prior iterations'
RNG, so resuming from iteration k replays the exact uninterrupted run.

Divergence handling: a non-finite loss aborts the run and returns the last
good periodic snapshot.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..dataset.batches import SamplePlan
from ..model import ModelConfig, WorldModel
from ..seeding import derive
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .flow import fm_loss


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 200
    batch_size: int = 8
    learning_rate: float = 5e-5
    schedule: str = "cosine"
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.0
    grad_clip: float = 1.0
    seed: int = 0
    checkpoint_every: int = 100
    log_every: int = 25

    def __post_init__(self):
        if self.iterations < 1 or self.learning_rate < 0:
            raise ValueError("iterations must be >= 1 and learning rate >= 0")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["betas"] = tuple(d["betas"])
        return cls(**d)


@dataclass
class TrainResult:
    checkpoint_path: Path
    loss_log: list[dict] = field(default_factory=list)
    diverged: bool = False
    final_loss: float = float("nan")


def cosine_lr(base_lr: float, iteration: int, total: int) -> float:
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * iteration / max(total, 1)))


def _schedule_lr(cfg: TrainConfig, iteration: int) -> float:
    if cfg.schedule == "cosine":
        return cosine_lr(cfg.learning_rate, iteration, cfg.iterations)
    return cfg.learning_rate


def build_model(model_cfg: ModelConfig, seed: int) -> WorldModel:
    gen_seed = derive(seed, "init")
    torch.manual_seed(gen_seed)
    return WorldModel(model_cfg)


def _optimizer_tensors(model: WorldModel, opt: torch.optim.Optimizer) -> dict[str, np.ndarray]:
    out = {}
    names = [n for n, p in model.named_parameters() if p.requires_grad]
    params = [p for _, p in model.named_parameters() if p.requires_grad]
    for name, p in zip(names, params):
        state = opt.state.get(p)
        if not state:
            continue
        out[f"{name}#m"] = state["exp_avg"].detach().cpu().numpy()
        out[f"{name}#v"] = state["exp_avg_sq"].detach().cpu().numpy()
    return out


def _restore_optimizer(model: WorldModel, opt: torch.optim.Optimizer, ckpt: Checkpoint, iteration: int):
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        m_key, v_key = f"{name}#m", f"{name}#v"
        if m_key not in ckpt.tensors:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(iteration)),
            "exp_avg": torch.from_numpy(ckpt.tensors[m_key].copy()),
            "exp_avg_sq": torch.from_numpy(ckpt.tensors[v_key].copy()),
        }


def _save(
    path: Path,
    model: WorldModel,
    opt: torch.optim.Optimizer,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    iteration: int,
    config_hash: str | None,
) -> Path:
    tensors = {n: v.detach().cpu().numpy() for n, v in model.state_dict().items()}
    tensors.update(_optimizer_tensors(model, opt))
    meta = {
        "model_config": model_cfg.to_dict(),
        "train_config": train_cfg.to_dict(),
        "iteration": iteration,
        "rng": {"scheme": "per-iteration", "seed": train_cfg.seed},
    }
    if config_hash is not None:
        meta["config_hash"] = config_hash
    return save_checkpoint(path, tensors, meta)


def train(
    episodes,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    out_path,
    resume_from=None,
    log_path=None,
    config_hash: str | None = None,
    progress: bool = False,
) -> TrainResult:
    """Run flow-matching training and write the final checkpoint to out_path."""
    out_path = Path(out_path)
    plan = SamplePlan(episodes, model_cfg.context_frames, derive(train_cfg.seed, "data"))

    model = build_model(model_cfg, train_cfg.seed)
    model.train()
    trainable = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(
        trainable,
        lr=train_cfg.learning_rate,
        betas=train_cfg.betas,
        weight_decay=train_cfg.weight_decay,
    )

    start_iter = 0
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        state = {n: torch.from_numpy(a.copy()) for n, a in ckpt.tensors.items() if "#" not in n}
        model.load_state_dict(state)
        start_iter = int(ckpt.meta["iteration"])
        _restore_optimizer(model, opt, ckpt, start_iter)

    loss_log: list[dict] = []
    log_file = None
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "a" if resume_from is not None else "w")

    last_good: Path | None = None
    diverged = False
    final_loss = float("nan")
    try:
        for i in range(start_iter, train_cfg.iterations):
            t0 = time.perf_counter()
            lr = _schedule_lr(train_cfg, i)
            for group in opt.param_groups:
                group["lr"] = lr
            batch = plan.batch(i, train_cfg.batch_size)
            gen = torch.Generator().manual_seed(derive(train_cfg.seed, "fm", i))
            loss = fm_loss(model, batch, gen)
            if not bool(torch.isfinite(loss.detach())):
                diverged = True
                break
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if train_cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(trainable, train_cfg.grad_clip)
            opt.step()
            final_loss = float(loss.detach())
            wall_ms = (time.perf_counter() - t0) * 1000.0
            if i % train_cfg.log_every == 0 or i == train_cfg.iterations - 1:
                record = {"iteration": i, "loss": final_loss, "lr": lr, "wall_ms": wall_ms}
                loss_log.append(record)
                if log_file:
                    log_file.write(json.dumps(record) + "\n")
                    log_file.flush()
                if progress:
                    print(f"iter {i:6d}  loss {final_loss:.5f}  lr {lr:.2e}  {wall_ms:.0f} ms")
            if train_cfg.checkpoint_every > 0 and (i + 1) % train_cfg.checkpoint_every == 0:
                last_good = _save(
                    out_path.with_suffix(f".iter{i + 1}.mwck"),
                    model, opt, model_cfg, train_cfg, i + 1, config_hash,
                )
    finally:
        if log_file:
            log_file.close()

    if diverged:
        if last_good is None:
            last_good = _save(out_path, model=build_model(model_cfg, train_cfg.seed), opt=opt,
                              model_cfg=model_cfg, train_cfg=train_cfg, iteration=0,
                              config_hash=config_hash)
        return TrainResult(checkpoint_path=last_good, loss_log=loss_log, diverged=True,
                           final_loss=final_loss)

    final = _save(out_path, model, opt, model_cfg, train_cfg, train_cfg.iterations, config_hash)
    return TrainResult(checkpoint_path=final, loss_log=loss_log, diverged=False, final_loss=final_loss)
