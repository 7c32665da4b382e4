"""Euler ODE sampling, deterministic parallel multi-view generation, and
autoregressive long-horizon rollout with global-state refresh.

Determinism contract: every view samples from its own seed, and all tensor
ops inside generation run with single-threaded torch kernels, so outputs are
byte-identical for any worker count and any scheduling. Parallelism (when
more than one worker is requested) comes purely from running independent
per-view samplers concurrently; torch releases the GIL inside kernels, so on
a multi-core host this approaches one-core-per-view scaling.

Rollout chains chunks with a one-frame overlap: each view's final frame
becomes the next chunk's observation frame (byte-for-byte), and the refreshed
observations re-enter the global state encoder before every chunk. Chunk m of
view c draws noise from the view seed itself for m=0 and from
derive(view_seed, "chunk", m) afterwards, so a manual chain of single-chunk
generations with those seeds reproduces the rollout exactly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import numpy as np
import torch

from ..dataset.actions import ActionTensor
from ..model import WorldModel
from ..nn_common import denormalize_frames, normalize_frames
from ..seeding import derive


@contextmanager
def _single_threaded_torch():
    prev = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(prev)


def euler_integrate(
    model,
    act_tokens: torch.Tensor | None,
    gstate: torch.Tensor | None,
    obs_norm: torch.Tensor,
    x_init: torch.Tensor,
    steps: int,
) -> torch.Tensor:
    """Euler-solve the probability-flow ODE from t=1 down to t=0, in float space.

    Uses a uniform time grid; frame 0 is re-pinned to the observation before
    every velocity evaluation. x_init is the noise draw at t=1.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = x_init.clone()
    ts = torch.linspace(1.0, 0.0, steps + 1, dtype=x.dtype)
    for k in range(steps):
        x[:, 0] = obs_norm
        t = ts[k].expand(x.shape[0])
        v = model.velocity(x, t, act_tokens, gstate, obs_norm)
        x = x + v * (ts[k + 1] - ts[k])
    x[:, 0] = obs_norm
    return x


def euler_sample(
    model: WorldModel,
    act_tokens: torch.Tensor,
    gstate: torch.Tensor | None,
    obs_frame: np.ndarray,
    steps: int,
    seed: int,
) -> np.ndarray:
    """Integrate the learned velocity field from noise to data for one view.

    act_tokens: (F, model_dim) or (1, F, model_dim) precomputed frame tokens.
    obs_frame: (H, W, 3) uint8 clean first frame, pinned throughout.
    Returns (F, H, W, 3) uint8 frames; pixels are clamped only at the end.
    """
    cfg = model.cfg
    if act_tokens.ndim == 2:
        act_tokens = act_tokens[None]
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            gen = torch.Generator().manual_seed(int(seed) & 0x7FFFFFFFFFFFFFFF)
            x_init = torch.randn(
                (1, cfg.context_frames, cfg.image_height, cfg.image_width, 3), generator=gen
            )
            obs = normalize_frames(obs_frame)[None]
            x = euler_integrate(model, act_tokens, gstate, obs, x_init, steps)
            frames = denormalize_frames(x[0])
            frames[0] = obs_frame  # conditioning frame passes through untouched
            return frames
    finally:
        if was_training:
            model.train()


def generate_views_parallel(
    model: WorldModel,
    actions: ActionTensor,
    obs: np.ndarray,
    steps: int,
    seeds: list[int],
    workers: int = 1,
) -> np.ndarray:
    """Generate all camera views of one chunk from shared conditioning.

    actions: tensor with exactly context_frames rows (shared by all views).
    obs: (C, H, W, 3) uint8 synchronized initial frames.
    seeds: one noise seed per view.
    Returns (C, F, H, W, 3) uint8. Output is independent of `workers`.
    """
    c = obs.shape[0]
    if len(seeds) != c:
        raise ValueError(f"need {c} per-view seeds, got {len(seeds)}")
    if actions.num_frames != model.cfg.context_frames:
        raise ValueError(
            f"actions cover {actions.num_frames} frames, model context is {model.cfg.context_frames}"
        )
    with _single_threaded_torch(), torch.no_grad():
        act_tokens = model.condition_actions(actions.values[None])
        gstate = model.encode_global_state(obs[None])

        def sample_view(view: int) -> np.ndarray:
            return euler_sample(model, act_tokens, gstate, obs[view], steps, seeds[view])

        if workers > 1 and c > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(sample_view, range(c)))
        else:
            results = [sample_view(v) for v in range(c)]
    return np.stack(results)


def chunk_seed(view_seed: int, chunk: int) -> int:
    """Noise seed for chunk m of a view: the view seed itself for chunk 0."""
    return view_seed if chunk == 0 else derive(view_seed, "chunk", chunk)


def rollout_autoregressive(
    model: WorldModel,
    actions: ActionTensor,
    obs: np.ndarray,
    steps: int,
    seeds: list[int],
    chunks: int,
    workers: int = 1,
) -> np.ndarray:
    """Chain chunk generations with one-frame overlap and global-state refresh.

    actions must cover chunks * (F - 1) + 1 frames. Returns per-view videos of
    that length; frame F-1 of chunk m equals frame 0 of chunk m+1 exactly.
    """
    f = model.cfg.context_frames
    expected = chunks * (f - 1) + 1
    if actions.num_frames != expected:
        raise ValueError(
            f"expected {expected} action rows for {chunks} chunks of context {f}, "
            f"got {actions.num_frames}"
        )
    current_obs = obs
    views: list[list[np.ndarray]] = [[] for _ in range(obs.shape[0])]
    for m in range(chunks):
        start = m * (f - 1)
        chunk_actions = actions.frame_slice(start, start + f)
        chunk_seeds = [chunk_seed(s, m) for s in seeds]
        generated = generate_views_parallel(
            model, chunk_actions, current_obs, steps, chunk_seeds, workers=workers
        )
        for c in range(obs.shape[0]):
            keep = generated[c] if m == 0 else generated[c, 1:]
            views[c].append(keep)
        current_obs = np.ascontiguousarray(generated[:, -1])
    return np.stack([np.concatenate(v) for v in views])
