"""Training-batch assembly from episodes.

An epoch enumerates every valid (episode, start frame, view) triple exactly
once in a seed-determined shuffle; the batch stream concatenates epochs so
batches always have exactly `batch_size` samples. Resume support comes for
free: sample s of the stream is a pure function of (seed, s).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from ..seeding import np_rng
from .actions import ActionTensor, AgentType
from .episodes import Episode


@dataclass
class FlowBatch:
    """One training batch of single-view chunks plus synchronized observations.

    clean_chunks: (B, F, H, W, 3) uint8, each sample one camera view.
    actions: (B, F, K, D_act) float32, rows aligned with the chunk frames.
    observations: (B, C, H, W, 3) uint8, all views at each chunk's first frame.
    view_index: (B,) which camera each sample renders.
    """

    clean_chunks: np.ndarray
    actions: np.ndarray
    observations: np.ndarray
    view_index: np.ndarray
    agent_types: tuple[AgentType, ...]

    @property
    def batch_size(self) -> int:
        return self.clean_chunks.shape[0]

    @property
    def context_frames(self) -> int:
        return self.clean_chunks.shape[1]


class SamplePlan:
    """Deterministic enumeration of (episode, start, view) training samples."""

    def __init__(self, episodes: Sequence[Episode], context_frames: int, seed: int):
        if not episodes:
            raise ValueError("empty episode set")
        self.episodes = list(episodes)
        self.context_frames = int(context_frames)
        self.seed = int(seed)
        first = self.episodes[0]
        self._shape = first.frames[0].shape[1:3]
        self._num_views = first.num_views
        self._agent_types = first.actions.agent_types
        for ep in self.episodes:
            if ep.num_frames < self.context_frames:
                raise ValueError(
                    f"episode length {ep.num_frames} < context {self.context_frames}"
                )
            for view in ep.frames:
                if view.shape[1:3] != self._shape:
                    raise ValueError("all views of all episodes must share one resolution")
            if ep.num_views != self._num_views:
                raise ValueError("all episodes must share the camera count")
            if ep.actions.agent_types != self._agent_types:
                raise ValueError("all episodes must share the agent type layout")
        self.triples: list[tuple[int, int, int]] = [
            (e, start, view)
            for e, ep in enumerate(self.episodes)
            for start in range(ep.num_frames - self.context_frames + 1)
            for view in range(ep.num_views)
        ]

    def __len__(self) -> int:
        return len(self.triples)

    def epoch_order(self, epoch: int) -> np.ndarray:
        return np_rng(self.seed, "epoch", epoch).permutation(len(self.triples))

    def sample_triple(self, sample_index: int) -> tuple[int, int, int]:
        epoch, pos = divmod(int(sample_index), len(self.triples))
        return self.triples[int(self.epoch_order(epoch)[pos])]

    def assemble(self, triples: Sequence[tuple[int, int, int]]) -> FlowBatch:
        chunks, acts, obs, views = [], [], [], []
        f = self.context_frames
        for e, start, view in triples:
            ep = self.episodes[e]
            chunks.append(ep.frames[view][start : start + f])
            acts.append(ep.actions.values[start : start + f])
            obs.append(np.stack([ep.frames[c][start] for c in range(ep.num_views)]))
            views.append(view)
        return FlowBatch(
            clean_chunks=np.stack(chunks),
            actions=np.stack(acts),
            observations=np.stack(obs),
            view_index=np.asarray(views, dtype=np.int64),
            agent_types=self._agent_types,
        )

    def batch(self, batch_index: int, batch_size: int) -> FlowBatch:
        base = batch_index * batch_size
        return self.assemble([self.sample_triple(base + j) for j in range(batch_size)])


def make_batches(
    episodes: Sequence[Episode], context_frames: int, batch_size: int, seed: int
) -> Iterator[FlowBatch]:
    """Endless deterministic stream of FlowBatches (epochs concatenated)."""
    plan = SamplePlan(episodes, context_frames, seed)
    i = 0
    while True:
        yield plan.batch(i, batch_size)
        i += 1
