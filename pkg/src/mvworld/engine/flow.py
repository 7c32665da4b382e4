"""Flow-matching algebra and the training objective.

A flow sample interpolates straight between clean data and unit Gaussian
noise: x_t = (1 - t) x + t eps, with regression target u = eps - x. The
endpoints are exact by construction (t=0 gives the data, t=1 the noise) and
the target is independent of t.

The loss draws t ~ U(0, 1) per sample and eps ~ N(0, I) per element from a
caller-supplied generator, so a fixed generator state makes the loss value
bit-reproducible. Frame 0 is conditioning (supplied clean to the network)
and is excluded from the error.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from ..dataset.batches import FlowBatch
from ..model import WorldModel
from ..nn_common import normalize_frames


@dataclass
class FlowSample:
    x_t: torch.Tensor
    t: torch.Tensor
    u: torch.Tensor
    eps: torch.Tensor


def fm_sample_point(x: torch.Tensor, t, eps: torch.Tensor) -> FlowSample:
    """Exact affine interpolation between data and noise.

    t may be a scalar or a (B,) tensor broadcast over x's remaining dims.
    """
    if eps.shape != x.shape:
        raise ValueError(f"noise shape {tuple(eps.shape)} != data shape {tuple(x.shape)}")
    t = torch.as_tensor(t, dtype=x.dtype, device=x.device)
    if bool((t < 0).any()) or bool((t > 1).any()):
        raise ValueError("t must lie in [0, 1]")
    t_b = t.reshape(t.shape + (1,) * (x.ndim - t.ndim))
    x_t = (1.0 - t_b) * x + t_b * eps
    u = eps - x
    return FlowSample(x_t=x_t, t=t, u=u, eps=eps)


def fm_loss(
    model: WorldModel, batch: FlowBatch, generator: torch.Generator
) -> torch.Tensor:
    """Mean squared velocity error over the noised frames of a batch."""
    clean = normalize_frames(batch.clean_chunks)
    b = clean.shape[0]
    t = torch.rand(b, generator=generator)
    eps = torch.randn(clean.shape, generator=generator)
    sample = fm_sample_point(clean, t, eps)
    act_tokens = model.condition_actions(batch.actions)
    gstate = model.encode_global_state(batch.observations)
    obs_frame = clean[:, 0]
    pred = model.velocity(sample.x_t, sample.t, act_tokens, gstate, obs_frame)
    return (pred[:, 1:] - sample.u[:, 1:]).pow(2).mean()
