from ..errors import (
    BadMagicError,
    ChecksumError,
    FormatError,
    TruncationError,
    VersionMismatchError,
)
from .actions import (
    ACTION_WIDTH,
    ActionTensor,
    AgentType,
    TypeAAction,
    TypeBAction,
    decode_action,
    encode_typed_action,
    random_typed_action,
    random_world_action,
    to_world_action,
    typed_from_world_action,
    unify_actions,
)
from .batches import FlowBatch, SamplePlan, make_batches
from .episodes import (
    Episode,
    GoalReachPlan,
    RandomPlan,
    default_agent_types,
    generate_episode,
    rendezvous_goal,
    replay_states,
)
from .episode_io import episode_from_bytes, episode_to_bytes, read_episode, write_episode

__all__ = [
    "ACTION_WIDTH",
    "ActionTensor",
    "AgentType",
    "TypeAAction",
    "TypeBAction",
    "decode_action",
    "encode_typed_action",
    "random_typed_action",
    "random_world_action",
    "to_world_action",
    "typed_from_world_action",
    "unify_actions",
    "FlowBatch",
    "SamplePlan",
    "make_batches",
    "Episode",
    "GoalReachPlan",
    "RandomPlan",
    "default_agent_types",
    "generate_episode",
    "rendezvous_goal",
    "replay_states",
    "episode_from_bytes",
    "episode_to_bytes",
    "read_episode",
    "write_episode",
    "FormatError",
    "BadMagicError",
    "ChecksumError",
    "TruncationError",
    "VersionMismatchError",
]
