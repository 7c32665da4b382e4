"""Heterogeneous action spaces unified into one zero-masked vector layout.

Agents come in two controller types. Type A issues a categorical direction
plus an intensity; type B issues a (dx, dy) unit delta plus an intensity.
Both drive identical world dynamics, but their encodings differ, mirroring
the keyboard-vs-gamepad split of real multi-player recordings.

The unified vector has a fixed 9-slot layout so files and checkpoints stay
interoperable:

    slots 0..4   type-A one-hot direction (stay, up, down, left, right)
    slot  5      type-A intensity
    slots 6..7   type-B dx, dy (each in {-1, 0, 1}, at most one nonzero)
    slot  8      type-B intensity

For each agent the other type's slots are zero, so a single shared encoder
serves both types, and the encoding is lossless for the owning type.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

import numpy as np

from ..worldsim import DIRECTION_ORDER, AgentAction, Direction

ACTION_WIDTH = 9

_DIR_INDEX = {d: i for i, d in enumerate(DIRECTION_ORDER)}
_DELTA_TO_DIR = {d.vector: d for d in DIRECTION_ORDER}


class AgentType(Enum):
    A = "A"
    B = "B"


@dataclass(frozen=True)
class TypeAAction:
    direction: Direction
    intensity: float


@dataclass(frozen=True)
class TypeBAction:
    dx: int
    dy: int
    intensity: float

    def __post_init__(self):
        if self.dx not in (-1, 0, 1) or self.dy not in (-1, 0, 1):
            raise ValueError(f"(dx, dy) entries must lie in -1/0/1, got {(self.dx, self.dy)}")
        if self.dx != 0 and self.dy != 0:
            raise ValueError("at most one of dx, dy may be nonzero")


TypedAction = Union[TypeAAction, TypeBAction]


@dataclass
class ActionTensor:
    """Unified per-frame per-agent action vectors.

    values: (I, K, ACTION_WIDTH) float32, zero-masked per the slot layout.
    agent_types: K controller types.
    """

    values: np.ndarray
    agent_types: tuple[AgentType, ...]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        self.agent_types = tuple(self.agent_types)
        if self.values.ndim != 3 or self.values.shape[2] != ACTION_WIDTH:
            raise ValueError(f"values must have shape (I, K, {ACTION_WIDTH})")
        if self.values.shape[1] != len(self.agent_types):
            raise ValueError("agent_types length must match the agent axis")

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def num_agents(self) -> int:
        return self.values.shape[1]

    def frame_slice(self, start: int, stop: int) -> "ActionTensor":
        return ActionTensor(self.values[start:stop].copy(), self.agent_types)

    def typed(self, frame: int, agent: int) -> TypedAction:
        return decode_action(self.values[frame, agent], self.agent_types[agent])

    def world_actions(self, frame: int) -> list[AgentAction]:
        return [to_world_action(self.typed(frame, k)) for k in range(self.num_agents)]


def encode_typed_action(action: TypedAction) -> np.ndarray:
    vec = np.zeros(ACTION_WIDTH, dtype=np.float32)
    if isinstance(action, TypeAAction):
        vec[_DIR_INDEX[action.direction]] = 1.0
        vec[5] = action.intensity
    elif isinstance(action, TypeBAction):
        vec[6] = action.dx
        vec[7] = action.dy
        vec[8] = action.intensity
    else:
        raise TypeError(f"unknown agent action type: {type(action).__name__}")
    return vec


def decode_action(vec: np.ndarray, agent_type: AgentType) -> TypedAction:
    vec = np.asarray(vec, dtype=np.float32)
    if vec.shape != (ACTION_WIDTH,):
        raise ValueError(f"expected a {ACTION_WIDTH}-slot vector, got shape {vec.shape}")
    if agent_type is AgentType.A:
        one_hot = vec[:5]
        if not np.isclose(one_hot.sum(), 1.0):
            raise ValueError("type-A direction slots must be one-hot")
        return TypeAAction(DIRECTION_ORDER[int(np.argmax(one_hot))], float(vec[5]))
    if agent_type is AgentType.B:
        return TypeBAction(int(round(float(vec[6]))), int(round(float(vec[7]))), float(vec[8]))
    raise ValueError(f"unknown agent type: {agent_type}")


def unify_actions(
    raw: Sequence[Sequence[TypedAction]], agent_types: Sequence[AgentType]
) -> ActionTensor:
    """Stack typed per-agent actions into the unified zero-masked tensor.

    `raw` is indexed [frame][agent]; each agent's entries must match its
    declared type.
    """
    agent_types = tuple(agent_types)
    num_frames = len(raw)
    values = np.zeros((num_frames, len(agent_types), ACTION_WIDTH), dtype=np.float32)
    for f, frame_actions in enumerate(raw):
        if len(frame_actions) != len(agent_types):
            raise ValueError(f"frame {f} has {len(frame_actions)} actions for {len(agent_types)} agents")
        for k, action in enumerate(frame_actions):
            expected = TypeAAction if agent_types[k] is AgentType.A else TypeBAction
            if not isinstance(action, expected):
                raise TypeError(
                    f"agent {k} is type {agent_types[k].value} but got {type(action).__name__}"
                )
            values[f, k] = encode_typed_action(action)
    return ActionTensor(values, agent_types)


def to_world_action(action: TypedAction) -> AgentAction:
    """Map either controller type onto the world's direction+intensity action."""
    if isinstance(action, TypeAAction):
        return AgentAction(action.direction, action.intensity)
    direction = _DELTA_TO_DIR[(action.dx, action.dy)]
    return AgentAction(direction, action.intensity if direction is not Direction.STAY else 0.0)


def typed_from_world_action(action: AgentAction, agent_type: AgentType) -> TypedAction:
    if agent_type is AgentType.A:
        return TypeAAction(action.direction, action.intensity)
    dx, dy = action.direction.vector
    return TypeBAction(dx, dy, action.intensity if action.direction is not Direction.STAY else 0.0)


# Movement intensities are quantized so that actions are exactly recoverable
# from rendered frames (displacement = round(2 * intensity) is invertible on
# this set); the world itself accepts any intensity in [0, 1].
INTENSITY_LEVELS = (0.5, 1.0)


def random_world_action(rng: np.random.Generator) -> AgentAction:
    """Uniform draw over the 9 legal quantized actions (stay + 4 dirs x 2 levels)."""
    idx = int(rng.integers(0, 1 + 4 * len(INTENSITY_LEVELS)))
    if idx == 0:
        return AgentAction(Direction.STAY, 0.0)
    idx -= 1
    direction = DIRECTION_ORDER[1 + idx // len(INTENSITY_LEVELS)]
    return AgentAction(direction, INTENSITY_LEVELS[idx % len(INTENSITY_LEVELS)])


def random_typed_action(rng: np.random.Generator, agent_type: AgentType) -> TypedAction:
    return typed_from_world_action(random_world_action(rng), agent_type)
